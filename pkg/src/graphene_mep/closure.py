"""
Maximum-entropy closure: constraint map, its inverse, and closure tensors.

The equilibrium

    f_eq = 1 / (exp(c|p|/kT - B nu.e_B - A) + 1)

is parametrized by Lagrange multipliers (A, B, theta_B).  Its moments are

    n = n_T I_0^2(A, B),        |u| = I_1^2 / I_0^2,        u || e_B,

and the momentum-flux and force tensors are

    P_ij = n (P e_i e_j + P_perp e'_i e'_j)
    Q_ij = (c/kT) n (Q e_i e_j + Q_perp e'_i e'_j)

with e = (cos theta_B, sin theta_B), e' = (-sin theta_B, cos theta_B) and

    P = (I_0^2 + I_2^2) / (2 I_0^2),  Q = (I_0^1 - I_2^1) / (2 I_0^2),
    P_perp = 1 - P,                   Q_perp = (I_0^1 + I_2^1) / (2 I_0^2).

All routines are vectorized over leading array dimensions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import interpolate, optimize, special

from .angular_kernels import (
    angular_moments,
    cutoff_from_psi,
    degenerate_kernel,
    degenerate_kernel_from_cutoff,
    psi_from_cutoff,
)
from .errors import ConvergenceError, DomainError
from .special_functions import bessel_ratio_inverse, fermi_phi, fermi_phi_inverse

# Below this |u| the isotropic closed form replaces the frame-based tensors.
ISOTROPIC_U = 1e-12
# Seeding regimes of the Newton inversion, in units of n/n_T.
MB_SEED_MAX_DENSITY = 0.1
DEGENERATE_SEED_MIN_DENSITY = 10.0
NEWTON_MAX_ITER = 100
LINE_SEARCH_HALVINGS = 40
# Bias below which I_1^2/B is replaced by its B -> 0 limit.
SMALL_BIAS = 1e-6


@dataclass(frozen=True)
class PhysicalScales:
    """Physical constants of the model.

    Attributes
    ----------
    c : float
        Fermi velocity.
    kT : float
        Thermal energy k_B T.
    hbar : float
        Reduced Planck constant.
    tau0 : float
        Current-relaxation time (``inf`` disables relaxation).
    gamma : float
        Constant of the fractional Poisson equation.
    """

    c: float = 1.0
    kT: float = 1.0
    hbar: float = 1.0
    tau0: float = math.inf
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("c", "kT", "hbar", "tau0", "gamma"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")

    @classmethod
    def reduced(cls, tau0: float = math.inf, gamma: float = 1.0) -> "PhysicalScales":
        """Internal units c = kT = hbar = 1, so that n_T = 1/(2 pi)."""
        return cls(1.0, 1.0, 1.0, tau0, gamma)

    @property
    def n_T(self) -> float:
        """Reference density (kT)^2 / (2 pi hbar^2 c^2)."""
        return self.kT ** 2 / (2.0 * math.pi * self.hbar ** 2 * self.c ** 2)

    # Reference units of the reduced system.
    @property
    def length_unit(self) -> float:
        return self.hbar * self.c / self.kT

    @property
    def time_unit(self) -> float:
        return self.hbar / self.kT

    @property
    def energy_unit(self) -> float:
        return self.kT

    @property
    def density_unit(self) -> float:
        return 1.0 / self.length_unit ** 2

    def to_reduced(self, quantity: str, value):
        """Convert a physical value of ``quantity`` into reduced units."""
        return np.asarray(value, dtype=float) / self._unit(quantity)

    def from_reduced(self, quantity: str, value):
        """Convert a reduced value of ``quantity`` back to physical units."""
        return np.asarray(value, dtype=float) * self._unit(quantity)

    def _unit(self, quantity: str) -> float:
        units = {
            "length": self.length_unit,
            "time": self.time_unit,
            "energy": self.energy_unit,
            "density": self.density_unit,
            "velocity": self.c,
            "force": self.energy_unit / self.length_unit,
        }
        try:
            return units[quantity]
        except KeyError:
            raise DomainError(f"unknown quantity {quantity!r}") from None

    def reduced_scales(self) -> "PhysicalScales":
        """The same physical system expressed in reduced units."""
        return PhysicalScales.reduced(
            tau0=self.tau0 / self.time_unit,
            gamma=self.gamma * self.energy_unit / (self.length_unit * self.density_unit),
        )


@dataclass(frozen=True)
class Multipliers:
    """Lagrange multipliers; arrays of a common shape or scalars."""

    A: np.ndarray
    B: np.ndarray
    theta_B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if np.any(~(B >= 0)):
            raise DomainError("multiplier B must be >= 0")
        theta = np.where(B == 0, 0.0, np.asarray(self.theta_B, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "theta_B", theta)

    @property
    def direction(self) -> np.ndarray:
        return np.stack([np.cos(self.theta_B), np.sin(self.theta_B)], axis=-1)


@dataclass(frozen=True)
class MomentState:
    """Density ``n`` (shape S) and direction field ``u`` (shape S + (2,))."""

    n: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if u.shape != n.shape + (2,):
            raise DomainError(f"u must have shape {n.shape + (2,)}, got {u.shape}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "u", u)

    @property
    def u_abs(self) -> np.ndarray:
        return np.hypot(self.u[..., 0], self.u[..., 1])

    def validate(self) -> None:
        if np.any(~(self.n > 0)):
            raise DomainError("density must be strictly positive")
        if np.any(~(self.u_abs < 1)):
            raise DomainError("|u| must be < 1")


@dataclass(frozen=True)
class ClosureTensors:
    P: np.ndarray
    Q: np.ndarray
    P_par: np.ndarray
    P_perp: np.ndarray
    Q_par: np.ndarray
    Q_perp: np.ndarray


_MAP_ORDERS = [(2.0, 0), (2.0, 1), (1.0, 0), (1.0, 1), (1.0, 2)]


def _map_moments(A, B):
    """(I_0^2, I_1^2, I_0^1, I_1^1, I_2^1) at (A, B)."""
    return angular_moments(_MAP_ORDERS, A, B)


def forward_map(m: Multipliers, scales: PhysicalScales) -> MomentState:
    """Moments (n, u) of the equilibrium with multipliers ``m``."""
    I02, I12 = angular_moments([(2.0, 0), (2.0, 1)], m.A, m.B)
    u_abs = I12 / I02
    return MomentState(scales.n_T * I02, u_abs[..., None] * m.direction)


def forward_jacobian(m: Multipliers) -> np.ndarray:
    """Jacobian of (A, B) -> (I_0^2, I_1^2), shape ``S + (2, 2)``.

    Entries are [[I_0^1, I_1^1], [I_1^1, (I_0^1 + I_2^1)/2]]; the determinant
    is positive, being proportional to a variance of cos(theta).
    """
    _, _, I01, I11, I21 = _map_moments(m.A, m.B)
    row0 = np.stack([I01, I11], axis=-1)
    row1 = np.stack([I11, 0.5 * (I01 + I21)], axis=-1)
    return np.stack([row0, row1], axis=-2)


@lru_cache(maxsize=1)
def _degenerate_table():
    """Monotone table psi -> (|u|, F_0^2) of the degenerate constraint map."""
    psi_lo = np.linspace(0.0, 0.25 * np.pi, 65)
    C = np.pi * np.linspace(1.0, 0.0, 161)[1:-1] ** 2
    psi = np.concatenate([psi_lo, psi_from_cutoff(C)])
    F0 = np.empty(psi.size)
    F1 = np.empty(psi.size)
    for k, p in enumerate(psi_lo):
        F0[k] = degenerate_kernel(0, 2.0, p)
        F1[k] = degenerate_kernel(1, 2.0, p)
    for k, c in enumerate(C, start=psi_lo.size):
        F0[k] = degenerate_kernel_from_cutoff(0, 2.0, c)
        F1[k] = degenerate_kernel_from_cutoff(1, 2.0, c)
    u = F1 / F0
    keep = np.concatenate([[True], np.diff(u) > 0])
    return (
        interpolate.PchipInterpolator(u[keep], psi[keep]),
        interpolate.PchipInterpolator(psi[keep], F0[keep]),
        u[keep][-1],
    )


def _seed(nu, u):
    """Regime-aware initial guess for (A, B) given n/n_T and |u|."""
    A = np.empty_like(nu)
    B = np.empty_like(nu)
    mb = nu < MB_SEED_MAX_DENSITY
    dg = nu > DEGENERATE_SEED_MIN_DENSITY
    mid = ~(mb | dg)
    if np.any(mb):
        Bm = bessel_ratio_inverse(u[mb])
        B[mb] = Bm
        A[mb] = np.log(nu[mb]) - Bm - np.log(special.ive(0, Bm))
    if np.any(dg):
        psi_of_u, F0_of_psi, u_max = _degenerate_table()
        psi = np.clip(psi_of_u(np.minimum(u[dg], u_max)), 0.0, 0.75 * np.pi)
        R = np.sqrt(nu[dg] / F0_of_psi(psi))
        A[dg] = R * np.cos(psi)
        B[dg] = R * np.sin(psi)
    if np.any(mid):
        Am = fermi_phi_inverse(nu[mid])
        A[mid] = Am
        B[mid] = 2.0 * u[mid] * nu[mid] / fermi_phi(1, Am)
    return A, np.maximum(B, 0.0)


def _residual(A, B, log_nu, u):
    I02, I12, I01, I11, I21 = _map_moments(A, B)
    uc = I12 / I02
    F = np.stack([np.log(I02) - log_nu, uc - u])
    return F, (I02, I12, I01, I11, I21, uc)


def _newton(A, B, nu, u, tol, max_iter=NEWTON_MAX_ITER):
    """Damped Newton iteration on F = (ln I_0^2 - ln nu, I_1^2/I_0^2 - u).

    Iterates until the residual is below ``1e-3 tol``, the step stalls at
    round-off, or the line search finds no decrease.  The margin below
    ``tol`` is needed because the inverse map amplifies residuals strongly
    near the critical line.
    """
    A = A.copy()
    B = B.copy()
    log_nu = np.log(nu)
    active = np.arange(A.size)
    F, aux = _residual(A, B, log_nu, u)
    F_out = F.copy()
    norm = np.hypot(F[0], F[1])
    for _ in range(max_iter):
        if active.size == 0:
            break
        I02, I12, I01, I11, I21, uc = aux
        j11 = I01 / I02
        j12 = I11 / I02
        j21 = (I11 - uc * I01) / I02
        j22 = (0.5 * (I01 + I21) - uc * I11) / I02
        det = j11 * j22 - j12 * j21
        dA = -(j22 * F[0] - j12 * F[1]) / det
        dB = -(-j21 * F[0] + j11 * F[1]) / det

        a0, b0 = A[active], B[active]
        lam = np.ones(active.size)
        pending = np.ones(active.size, dtype=bool)
        newA, newB = a0.copy(), b0.copy()
        newF = F.copy()
        new_aux = [x.copy() for x in aux]
        new_norm = norm.copy()
        for _h in range(LINE_SEARCH_HALVINGS):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            ta = a0[idx] + lam[idx] * dA[idx]
            tb = np.maximum(b0[idx] + lam[idx] * dB[idx], 0.0)
            with np.errstate(all="ignore"):
                tF, taux = _residual(ta, tb, log_nu[active[idx]], u[active[idx]])
            tn = np.hypot(tF[0], tF[1])
            good = np.isfinite(tn) & (tn <= norm[idx])
            g = idx[good]
            newA[g], newB[g] = ta[good], tb[good]
            newF[:, g] = tF[:, good]
            for k in range(len(aux)):
                new_aux[k][g] = taux[k][good]
            new_norm[g] = tn[good]
            pending[g] = False
            lam[idx[~good]] *= 0.5
        moved = ~pending
        stepA = np.abs(newA - a0)
        stepB = np.abs(newB - b0)
        scale = 1.0 + np.abs(a0) + b0
        A[active] = newA
        B[active] = newB
        small = np.maximum(np.abs(newF[0]), np.abs(newF[1])) <= 1e-3 * tol
        done = (~moved) | ((stepA + stepB) <= 1e-14 * scale) | small
        F, aux, norm = newF, new_aux, new_norm
        F_out[:, active] = F
        keep = ~done
        active = active[keep]
        F = F[:, keep]
        aux = [x[keep] for x in aux]
        norm = norm[keep]
    return A, B, F_out


def invert_constraints(
    target: MomentState,
    scales: PhysicalScales,
    tol: float = 1e-10,
    guess: Multipliers | None = None,
) -> Multipliers:
    """Lagrange multipliers reproducing ``target``.

    Parameters
    ----------
    target : MomentState
        Requires n > 0 and |u| < 1 everywhere.
    scales : PhysicalScales
    tol : float
        Accepted relative error in n and absolute error in |u|.
    guess : Multipliers, optional
        Warm start (e.g. the previous time step); the regime-aware seed is
        used where it is absent.

    Raises
    ------
    DomainError
        Inadmissible target.
    ConvergenceError
        The residual stays above ``tol`` after the Newton iteration.
    """
    target.validate()
    shape = target.n.shape
    nu = (target.n / scales.n_T).ravel()
    u = target.u_abs.ravel()
    theta = np.arctan2(target.u[..., 1], target.u[..., 0]).ravel()
    if guess is not None:
        A0 = np.broadcast_to(guess.A, shape).ravel().astype(float)
        B0 = np.broadcast_to(guess.B, shape).ravel().astype(float)
    else:
        A0, B0 = _seed(nu, u)
    A = np.empty_like(nu)
    B = np.empty_like(nu)
    iso = u == 0.0
    if np.any(iso):
        A[iso] = fermi_phi_inverse(nu[iso])
        B[iso] = 0.0
    rest = ~iso
    if np.any(rest):
        A[rest], B[rest], F = _newton(A0[rest], B0[rest], nu[rest], u[rest], tol)
        bad = ~((np.abs(F[0]) <= tol) & (np.abs(F[1]) <= tol))
        if np.any(bad) and guess is not None:
            # Warm start failed somewhere; retry those cells from the seed.
            idx = np.nonzero(rest)[0][bad]
            sa, sb = _seed(nu[idx], u[idx])
            A[idx], B[idx], F[:, bad] = _newton(sa, sb, nu[idx], u[idx], tol)
            bad = ~((np.abs(F[0]) <= tol) & (np.abs(F[1]) <= tol))
        if np.any(bad):
            k = np.nonzero(rest)[0][np.argmax(bad)]
            raise ConvergenceError(
                f"constraint inversion failed at {int(bad.sum())} states "
                f"(e.g. n/n_T={nu[k]:.6g}, |u|={u[k]:.17g})"
            )
    theta = np.where(B == 0, 0.0, theta)
    return Multipliers(A.reshape(shape), B.reshape(shape), theta.reshape(shape))


def closure_scalars(m: Multipliers):
    """(P, P_perp, Q, Q_perp) as functions of the multipliers."""
    I02, I22, I01, I21 = angular_moments([(2.0, 0), (2.0, 2), (1.0, 0), (1.0, 2)], m.A, m.B)
    P = 0.5 * (I02 + I22) / I02
    Q = 0.5 * (I01 - I21) / I02
    Qp = 0.5 * (I01 + I21) / I02
    return P, 1.0 - P, Q, Qp


def closure_tensors(target: MomentState, m: Multipliers, scales: PhysicalScales) -> ClosureTensors:
    """Closure tensors P_ij and Q_ij for ``target`` with multipliers ``m``.

    The tensors are assembled in the orthonormal frame (e_B, e_B^perp), which
    removes the 1/|u|^2 singularity.  Where |u| < ISOTROPIC_U the isotropic
    closed form P = n/2 delta, Q = c n_T phi_1(A) / (2 kT) delta is used.
    """
    n = target.n
    P, Pp, Q, Qp = closure_scalars(m)
    iso = target.u_abs < ISOTROPIC_U
    if np.any(iso):
        A = np.broadcast_to(m.A, n.shape)
        half_q = 0.5 * fermi_phi(1, A[iso]) / fermi_phi(2, A[iso])
        P, Pp, Q, Qp = (np.array(x, dtype=float, copy=True) for x in np.broadcast_arrays(P, Pp, Q, Qp))
        P[iso] = 0.5
        Pp[iso] = 0.5
        Q[iso] = half_q
        Qp[iso] = half_q
    e = m.direction
    ep = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    ee = e[..., :, None] * e[..., None, :]
    pp = ep[..., :, None] * ep[..., None, :]
    nn = n[..., None, None]
    Pt = nn * (P[..., None, None] * ee + Pp[..., None, None] * pp)
    Qt = (scales.c / scales.kT) * nn * (Q[..., None, None] * ee + Qp[..., None, None] * pp)
    return ClosureTensors(Pt, Qt, P, Pp, Q, Qp)


def closure(target: MomentState, scales: PhysicalScales, tol: float = 1e-10, guess: Multipliers | None = None):
    """Invert the constraints and return ``(multipliers, tensors)``."""
    m = invert_constraints(target, scales, tol, guess)
    return m, closure_tensors(target, m, scales)


# Regime functions ----------------------------------------------------------


def _check_u(u_abs):
    u = np.asarray(u_abs, dtype=float)
    if np.any(~((u >= 0) & (u < 1))):
        raise DomainError("|u| must lie in [0, 1)")
    return u


def regime_X(u_abs):
    """Maxwell-Boltzmann closure coefficient

        X(|u|) = (I_0(B) + I_2(B)) / (2 I_0(B)),   I_1(B)/I_0(B) = |u|,

    which equals P = P_perp' = Q_perp = 1 - Q below the critical line.
    """
    u = _check_u(u_abs)
    B = np.asarray(bessel_ratio_inverse(u), dtype=float)
    X = 0.5 * (1.0 + special.ive(2, B) / special.ive(0, B))
    return float(X) if X.ndim == 0 else X


def _F_all(psi: float):
    """(F_0^2, F_1^2, F_2^2, F_0^1, F_2^1) at psi."""
    if psi <= 0.25 * math.pi:
        return tuple(degenerate_kernel(N, s, psi) for N, s in ((0, 2), (1, 2), (2, 2), (0, 1), (2, 1)))
    C = float(cutoff_from_psi(psi))
    return tuple(degenerate_kernel_from_cutoff(N, s, C) for N, s in ((0, 2), (1, 2), (2, 2), (0, 1), (2, 1)))


def _F_all_cut(C: float):
    return tuple(degenerate_kernel_from_cutoff(N, s, C) for N, s in ((0, 2), (1, 2), (2, 2), (0, 1), (2, 1)))


def degenerate_psi(u_abs: float) -> tuple[float, float | None]:
    """Polar angle psi solving F_1^2(psi)/F_0^2(psi) = |u|.

    Returns ``(psi, C)`` where C is the cutoff angle when psi > pi/4 (the
    root is then found in the C variable for accuracy near |u| = 1) and
    ``None`` otherwise.
    """
    u = float(_check_u(u_abs))
    if u == 0.0:
        return 0.0, None
    ratio = lambda p: degenerate_kernel(1, 2.0, p) / degenerate_kernel(0, 2.0, p)
    u_quarter = ratio(0.25 * math.pi)
    if u <= u_quarter:
        psi = optimize.brentq(lambda p: ratio(p) - u, 0.0, 0.25 * math.pi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        return psi, None
    # 1 - u ~ C^2/14 near collimation; solve for C on a log scale.
    g = lambda C: 1.0 - degenerate_kernel_from_cutoff(1, 2.0, C) / degenerate_kernel_from_cutoff(0, 2.0, C) - (1.0 - u)
    C = optimize.brentq(g, 1e-12, math.pi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=400)
    return float(psi_from_cutoff(C)), C


def regime_YZ(u_abs):
    """Degenerate-gas closure coefficients (Y, Z, Z_perp) at |u|.

    Y = (F_0^2 + F_2^2)/(2 F_0^2), Z = (F_0^1 - F_2^1)/(2 sqrt(2 F_0^2)),
    Z_perp = (F_0^1 + F_2^1)/(2 sqrt(2 F_0^2)), evaluated at the psi solving
    F_1^2/F_0^2 = |u|.
    """
    u = _check_u(u_abs)
    if u.ndim:
        out = np.array([regime_YZ(float(x)) for x in u.ravel()])
        return tuple(out[:, k].reshape(u.shape) for k in range(3))
    psi, C = degenerate_psi(float(u))
    F02, _, F22, F01, F21 = _F_all(psi) if C is None else _F_all_cut(C)
    root = math.sqrt(2.0 * F02)
    return 0.5 * (F02 + F22) / F02, 0.5 * (F01 - F21) / root, 0.5 * (F01 + F21) / root


# Free energy ---------------------------------------------------------------


def free_energy_density(state: MomentState, m: Multipliers, V, scales: PhysicalScales, species_sign: int = 1):
    """Local free energy

        <eps> = kT (A n + B n|u| - n_T I_0^3(A, B)) +- n V,

    the Legendre transform of ``<eps>* = kT n_T I_0^3`` (the p-space integral
    of ln(1 + exp(M - E)) reduces to phi_3).
    """
    I03 = angular_moments([(3.0, 0)], m.A, m.B)[0]
    n = state.n
    return scales.kT * (m.A * n + m.B * n * state.u_abs - scales.n_T * I03) + species_sign * n * np.asarray(V, dtype=float)


def entropy_flux(state: MomentState, m: Multipliers, V, scales: PhysicalScales, species_sign: int = 1):
    """Free-energy flux <nu_i eps>, shape ``S + (2,)``.

        <nu eps> = kT (A n u + B P.e - n_T I_1^3 e) +- V n u

    with e the unit vector along B and P the momentum-flux tensor.
    """
    I13 = angular_moments([(3.0, 1)], m.A, m.B)[0]
    tens = closure_tensors(state, m, scales)
    e = m.direction
    Pe = np.einsum("...ij,...j->...i", tens.P, e)
    nu_ = state.n[..., None] * state.u
    V = np.asarray(V, dtype=float)[..., None]
    return scales.kT * (m.A[..., None] * nu_ + m.B[..., None] * Pe - scales.n_T * I13[..., None] * e) + species_sign * V * nu_


def dual_free_energy(alpha, scales: PhysicalScales):
    """``<eps>*(alpha) = kT n_T I_0^3(A, |B|)`` for alpha = (A, B_1, B_2)."""
    alpha = np.asarray(alpha, dtype=float)
    B = np.hypot(alpha[..., 1], alpha[..., 2])
    return scales.kT * scales.n_T * angular_moments([(3.0, 0)], alpha[..., 0], B)[0]


def dual_hessian(alpha, scales: PhysicalScales) -> np.ndarray:
    """Analytic Hessian of ``<eps>*`` in alpha = (A, B_1, B_2), shape S + (3, 3).

    Equals kT n_T <m m^T f(1 - f)> in reduced momentum variables:
    [[I_0^1, I_1^1 e], [I_1^1 e, E_2 e e + (I_1^2/B) e' e']] with
    E_2 = (I_0^1 + I_2^1)/2 and I_1^2/B replaced by its limit phi_1(A)/2
    below ``SMALL_BIAS``.
    """
    alpha = np.asarray(alpha, dtype=float)
    A = alpha[..., 0]
    B = np.hypot(alpha[..., 1], alpha[..., 2])
    I01, I11, I21, I12 = angular_moments([(1.0, 0), (1.0, 1), (1.0, 2), (2.0, 1)], A, B)
    safe = np.where(B > 0, B, 1.0)
    # I_1^2 / B = phi_1(A)/2 + O(B^2); the limit avoids dividing round-off by B.
    ratio = np.where(B > SMALL_BIAS, I12 / np.where(B > SMALL_BIAS, B, 1.0), 0.5 * fermi_phi(1, A))
    e = np.stack([np.where(B > 0, alpha[..., 1] / safe, 1.0), np.where(B > 0, alpha[..., 2] / safe, 0.0)], axis=-1)
    ep = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    E2 = 0.5 * (I01 + I21)
    H = np.zeros(A.shape + (3, 3))
    H[..., 0, 0] = I01
    H[..., 0, 1:] = I11[..., None] * e
    H[..., 1:, 0] = I11[..., None] * e
    H[..., 1:, 1:] = E2[..., None, None] * e[..., :, None] * e[..., None, :] + ratio[..., None, None] * ep[..., :, None] * ep[..., None, :]
    return scales.kT * scales.n_T * H
