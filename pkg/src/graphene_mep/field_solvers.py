"""
Finite-volume solver for the bipolar moment system

    d_t n + c d_i (n u_i) = 0
    d_t (n u_i) + c d_j P_ij = +- F_j Q_ij - n u_i / tau0,     F = -grad V,

one copy per species (electrons +, holes -), with the optional fractional
Poisson coupling  gamma (-Laplacian)^(1/2) V_int = n_+ - n_-.

Scheme: first-order Rusanov fluxes with wave-speed bound c and an
exponential Heun (integrating-factor RK2) time step that treats the
relaxation of n u exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .angular_kernels import angular_moments
from .closure import (
    MomentState,
    Multipliers,
    PhysicalScales,
    closure_tensors,
    entropy_flux,
    free_energy_density,
    invert_constraints,
)
from .errors import DomainError, InvariantViolation, StabilityError
from .io import write_csv

SPECIES = ((+1, "plus"), (-1, "minus"))
DENSITY_FLOOR = 1e-14


@dataclass
class FieldGrid:
    """Uniform 1D or 2D grid with per-cell states of both species.

    Arrays have shape ``cells`` (densities, potentials) or ``cells + (2,)``
    (direction fields).  In 1D the direction field still has two components
    but only x-derivatives act.
    """

    cells: tuple
    dx: tuple
    n_plus: np.ndarray
    u_plus: np.ndarray
    n_minus: np.ndarray
    u_minus: np.ndarray
    V_ext: np.ndarray
    periodic: tuple = None
    V: np.ndarray = None
    time: float = 0.0
    multipliers: dict = field(default_factory=dict)
    floored_cells: int = 0

    def __post_init__(self):
        self.cells = tuple(int(c) for c in self.cells)
        self.dx = tuple(float(d) for d in self.dx)
        if len(self.cells) not in (1, 2) or len(self.dx) != len(self.cells):
            raise DomainError("grid must be 1D or 2D with one spacing per axis")
        if self.periodic is None:
            self.periodic = (True,) * len(self.cells)
        self.periodic = tuple(bool(p) for p in self.periodic)
        for name in ("n_plus", "n_minus", "V_ext"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.cells:
                raise DomainError(f"{name} must have shape {self.cells}")
            setattr(self, name, arr)
        for name in ("u_plus", "u_minus"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.cells + (2,):
                raise DomainError(f"{name} must have shape {self.cells + (2,)}")
            setattr(self, name, arr)
        self.V = self.V_ext.copy() if self.V is None else np.asarray(self.V, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    def coordinates(self):
        """Cell-centre coordinates, one array per axis."""
        axes = [(np.arange(n) + 0.5) * d for n, d in zip(self.cells, self.dx)]
        return np.meshgrid(*axes, indexing="ij")

    def state(self, sign: int) -> MomentState:
        return MomentState(self.n_plus, self.u_plus) if sign > 0 else MomentState(self.n_minus, self.u_minus)

    def check_invariants(self) -> None:
        for sign, label in SPECIES:
            st = self.state(sign)
            if np.any(~(st.n > 0)):
                raise InvariantViolation(f"non-positive density for species {label} at t={self.time}")
            if np.any(~(st.u_abs < 1)):
                raise InvariantViolation(f"|u| >= 1 for species {label} at t={self.time}")

    def total_mass(self, sign: int) -> float:
        return float(np.sum(self.state(sign).n) * self.cell_volume)

    def copy(self) -> "FieldGrid":
        return replace(
            self,
            n_plus=self.n_plus.copy(),
            u_plus=self.u_plus.copy(),
            n_minus=self.n_minus.copy(),
            u_minus=self.u_minus.copy(),
            V_ext=self.V_ext.copy(),
            V=self.V.copy(),
            multipliers=dict(self.multipliers),
        )


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    Attributes
    ----------
    cfl : float
        Courant number, ``dt <= cfl * min(dx) / c``.
    tau0 : float
        Relaxation time; ``inf`` disables relaxation.
    t_end : float
    poisson : bool
        Recompute V = V_ext + V_int from the fractional Poisson equation.
    gamma : float
        Poisson constant.
    species_signs : tuple
        Force sign per species (electrons, holes).
    closure_tol : float
    """

    cfl: float = 0.4
    tau0: float = math.inf
    t_end: float = 1.0
    poisson: bool = False
    gamma: float = 1.0
    species_signs: tuple = (+1, -1)
    closure_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise DomainError("CFL number must lie in (0, 1)")
        if not self.tau0 > 0:
            raise DomainError("tau0 must be positive (inf disables relaxation)")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")


def max_stable_dt(grid: FieldGrid, cfg: SolverConfig, scales: PhysicalScales) -> float:
    return cfg.cfl * min(grid.dx) / scales.c


# Spatial operators ---------------------------------------------------------


def _shift(a: np.ndarray, offset: int, axis: int, periodic: bool) -> np.ndarray:
    """Neighbour values a[i + offset] along ``axis`` (edge copy if not periodic)."""
    if periodic:
        return np.roll(a, -offset, axis=axis)
    n = a.shape[axis]
    idx = np.clip(np.arange(n) + offset, 0, n - 1)
    return np.take(a, idx, axis=axis)


def gradient(f: np.ndarray, grid: FieldGrid) -> np.ndarray:
    """Central-difference gradient, shape ``cells + (2,)`` (zero y-part in 1D)."""
    out = np.zeros(f.shape + (2,))
    for ax in range(grid.dim):
        p = grid.periodic[ax]
        out[..., ax] = (_shift(f, 1, ax, p) - _shift(f, -1, ax, p)) / (2.0 * grid.dx[ax])
        if not p:
            # One-sided differences at the two boundary layers.
            sl = [slice(None)] * f.ndim
            sl[ax] = 0
            lo = tuple(sl)
            sl[ax] = -1
            hi = tuple(sl)
            sl1 = list(lo)
            sl1[ax] = 1
            sl2 = list(lo)
            sl2[ax] = -2
            out[lo + (ax,)] = (f[tuple(sl1)] - f[lo]) / grid.dx[ax]
            out[hi + (ax,)] = (f[hi] - f[tuple(sl2)]) / grid.dx[ax]
    return out


def physical_flux(n, m, P, axis: int, c: float):
    """Flux of (n, m_x, m_y) in direction ``axis``: c (m_axis, P_x,axis, P_y,axis)."""
    return c * m[..., axis], c * P[..., :, axis]


def _closure_for(n, m, species, grid, cfg, scales):
    u = m / n[..., None]
    st = MomentState(n, u)
    if np.any(~(st.u_abs < 1)):
        raise InvariantViolation(f"|u| >= 1 reached inside a stage at t={grid.time}")
    guess = grid.multipliers.get(species)
    mult = invert_constraints(st, scales, cfg.closure_tol, guess)
    grid.multipliers[species] = mult
    return st, mult, closure_tensors(st, mult, scales)


def _shifted_moments(mult: Multipliers, dA, scales: PhysicalScales):
    """(n, n u) of the equilibrium with A replaced by A + dA (same B, theta_B).

    ``dA`` may carry extra leading axes; several shifts are then evaluated in
    one quadrature call.
    """
    I02, I12 = angular_moments([(2.0, 0), (2.0, 1)], mult.A + dA, mult.B)
    n = scales.n_T * I02
    return n, (scales.n_T * I12)[..., None] * mult.direction


def _rhs(n, m, species, force_sign, V, grid: FieldGrid, cfg: SolverConfig, scales: PhysicalScales):
    """Semi-discrete right-hand side (flux divergence + force source).

    The Rusanov viscosity acts on states shifted to the face potential
    V_f = (V_L + V_R)/2, i.e. A -> A + sign (V - V_f)/kT.  The viscosity then
    vanishes at equilibria (kT A + sign V = const, u = 0) and reduces to the
    plain Rusanov term when V is uniform.
    """
    st, mult, tens = _closure_for(n, m, species, grid, cfg, scales)
    dn = np.zeros_like(n)
    dm = np.zeros_like(m)
    c = scales.c
    for ax in range(grid.dim):
        p = grid.periodic[ax]
        fn, fm = physical_flux(n, m, tens.P, ax, c)
        fnR, fmR = _shift(fn, 1, ax, p), _shift(fm, 1, ax, p)
        VR = _shift(V, 1, ax, p)
        half_dV = 0.5 * force_sign * (VR - V) / scales.kT
        if np.any(half_dV != 0.0):
            ns, ms = _shifted_moments(mult, np.stack([-half_dV, half_dV]), scales)
            nL, mL, nRs, mRs = ns[0], ms[0], ns[1], ms[1]
            # Right state of face i+1/2 lives in cell i+1, shifted by -half_dV[i].
            nR, mR = _shift(nRs, 1, ax, p), _shift(mRs, 1, ax, p)
        else:
            nL, mL = n, m
            nR, mR = _shift(n, 1, ax, p), _shift(m, 1, ax, p)
        # Rusanov flux at the i+1/2 face, wave-speed bound c.
        Fn = 0.5 * (fn + fnR) - 0.5 * c * (nR - nL)
        Fm = 0.5 * (fm + fmR) - 0.5 * c * (mR - mL)
        Fn_left = _shift(Fn, -1, ax, p)
        Fm_left = _shift(Fm, -1, ax, p)
        dn -= (Fn - Fn_left) / grid.dx[ax]
        dm -= (Fm - Fm_left) / grid.dx[ax]
    force = -gradient(V, grid)
    dm += force_sign * np.einsum("...ij,...j->...i", tens.Q, force)
    return dn, dm


def _potential(grid: FieldGrid, n_plus, n_minus, cfg: SolverConfig) -> np.ndarray:
    if not cfg.poisson:
        return grid.V_ext
    return grid.V_ext + poisson_solve(grid, cfg.gamma, n_plus, n_minus)


def hyperbolic_step(grid: FieldGrid, cfg: SolverConfig, dt: float, scales: PhysicalScales) -> FieldGrid:
    """Advance both species by one step of size ``dt``.

    Returns a new grid; the input is left untouched.  Relaxation of n u is
    integrated exactly inside each stage (exponential Heun scheme).

    Raises
    ------
    StabilityError
        ``dt`` exceeds the CFL bound.
    InvariantViolation
        A density became non-positive or |u| reached 1.
    """
    if not 0 < dt <= max_stable_dt(grid, cfg, scales) * (1 + 1e-12):
        raise StabilityError(f"dt={dt} violates the CFL bound {max_stable_dt(grid, cfg, scales)}")
    out = grid.copy()
    signs = dict(zip((+1, -1), cfg.species_signs))
    U = {s: (grid.state(s).n, grid.state(s).n[..., None] * grid.state(s).u) for s, _ in SPECIES}

    # Exponential (integrating-factor) Heun scheme: the linear relaxation is
    # solved exactly with the transport/force terms frozen over each stage.
    # With tau0 = inf it is the SSP-RK2 (Heun) method; for tau0 << dt it
    # gives n u -> tau0 x (transport + force), the diffusive balance.
    if math.isfinite(cfg.tau0):
        decay = math.exp(-dt / cfg.tau0)
        weight = -cfg.tau0 * math.expm1(-dt / cfg.tau0)
    else:
        decay, weight = 1.0, dt

    def rates(Ucur):
        V = _potential(grid, Ucur[+1][0], Ucur[-1][0], cfg)
        return {s: _rhs(*Ucur[s], s, signs[s], V, out, cfg, scales) for s, _ in SPECIES}

    R0 = rates(U)
    U1 = {s: (U[s][0] + dt * R0[s][0], decay * U[s][1] + weight * R0[s][1]) for s, _ in SPECIES}
    for s, _ in SPECIES:
        if np.any(~(U1[s][0] > 0)):
            raise InvariantViolation(f"non-positive density in RK stage at t={grid.time}")
    R1 = rates(U1)
    floored = 0
    for s, _ in SPECIES:
        n = U[s][0] + 0.5 * dt * (R0[s][0] + R1[s][0])
        m = decay * U[s][1] + 0.5 * weight * (R0[s][1] + R1[s][1])
        if np.any(~(n > 0)):
            raise InvariantViolation(f"non-positive density after step at t={grid.time}")
        n_ref = float(np.max(n))
        low = n < DENSITY_FLOOR * n_ref
        if np.any(low):
            n = np.where(low, DENSITY_FLOOR * n_ref, n)
            floored += int(low.sum())
        u = m / n[..., None]
        if s > 0:
            out.n_plus, out.u_plus = n, u
        else:
            out.n_minus, out.u_minus = n, u
    out.floored_cells = floored
    out.time = grid.time + dt
    out.V = _potential(out, out.n_plus, out.n_minus, cfg)
    out.check_invariants()
    return out


# Poisson coupling ----------------------------------------------------------


def _wavenumbers(grid: FieldGrid):
    ks = [2.0 * np.pi * np.fft.fftfreq(n, d) for n, d in zip(grid.cells, grid.dx)]
    K = np.meshgrid(*ks, indexing="ij")
    return np.sqrt(sum(k ** 2 for k in K))


def poisson_solve(grid: FieldGrid, gamma: float, n_plus=None, n_minus=None) -> np.ndarray:
    """Zero-mean V_int solving gamma (-Laplacian)^(1/2) V_int = n_+ - n_- spectrally.

    The mean of the source is removed (solvability on the torus).

    Raises
    ------
    DomainError
        Non-periodic grid.
    """
    if not all(grid.periodic):
        raise DomainError("poisson_solve supports periodic grids only")
    n_plus = grid.n_plus if n_plus is None else n_plus
    n_minus = grid.n_minus if n_minus is None else n_minus
    rho = np.asarray(n_plus - n_minus, dtype=float)
    rho_hat = np.fft.fftn(rho - rho.mean())
    k = _wavenumbers(grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        V_hat = np.where(k > 0, rho_hat / (gamma * k), 0.0)
    return np.real(np.fft.ifftn(V_hat))


def fractional_laplacian_half(grid: FieldGrid, V: np.ndarray) -> np.ndarray:
    """Spectral (-Laplacian)^(1/2) V on the periodic grid."""
    k = _wavenumbers(grid)
    return np.real(np.fft.ifftn(k * np.fft.fftn(V)))


# Diagnostics ---------------------------------------------------------------


@dataclass(frozen=True)
class FreeEnergyReport:
    total: float
    boundary_flux: float
    source: float


def _species_free_energy(grid: FieldGrid, sign: int, force_sign: int, scales: PhysicalScales, tol=1e-10):
    st = grid.state(sign)
    mult = invert_constraints(st, scales, tol, grid.multipliers.get(sign))
    return st, mult, free_energy_density(st, mult, grid.V, scales, force_sign)


def free_energy_report(
    grid: FieldGrid,
    scales: PhysicalScales,
    V_previous: np.ndarray | None = None,
    dt: float | None = None,
    species_signs=(+1, -1),
) -> FreeEnergyReport:
    """Total free energy, net outward free-energy flux, and the V-source.

    ``source`` is int (n_+ - n_-) dV/dt dx, with dV/dt estimated by the
    backward difference ``(V - V_previous)/dt`` (zero when not given).
    ``boundary_flux`` is the outward flux c <nu eps> through non-periodic
    boundaries (zero on a torus).
    """
    signs = dict(zip((+1, -1), species_signs))
    total = 0.0
    flux = 0.0
    for s, _ in SPECIES:
        st, mult, eps = _species_free_energy(grid, s, signs[s], scales)
        total += float(np.sum(eps)) * grid.cell_volume
        if not all(grid.periodic):
            J = scales.c * entropy_flux(st, mult, grid.V, scales, signs[s])
            for ax in range(grid.dim):
                if grid.periodic[ax]:
                    continue
                face = grid.cell_volume / grid.dx[ax]
                flux += float(np.sum(np.take(J[..., ax], -1, axis=ax)) - np.sum(np.take(J[..., ax], 0, axis=ax))) * face
    source = 0.0
    if V_previous is not None and dt:
        dVdt = (grid.V - np.asarray(V_previous, dtype=float)) / dt
        source = float(np.sum((grid.n_plus - grid.n_minus) * dVdt)) * grid.cell_volume
    return FreeEnergyReport(total, flux, source)


def flux_jacobian(state: MomentState, scales: PhysicalScales, axis: int = 0, h: float = 1e-6) -> np.ndarray:
    """Quasilinear Jacobian dF_axis/dU of the closed flux at a single state.

    U = (n, n u_1, n u_2); derivatives by central differences with relative
    step ``h`` through `invert_constraints` and `closure_tensors`.
    """
    n0 = float(state.n)
    U0 = np.array([n0, n0 * state.u[0], n0 * state.u[1]])

    def flux(U):
        st = MomentState(np.array(U[0]), np.array(U[1:] / U[0]))
        mult = invert_constraints(st, scales, 1e-13)
        P = closure_tensors(st, mult, scales).P
        return scales.c * np.array([U[1 + axis], P[0, axis], P[1, axis]])

    J = np.empty((3, 3))
    for k in range(3):
        step = h * max(abs(U0[k]), n0)
        Up, Um = U0.copy(), U0.copy()
        Up[k] += step
        Um[k] -= step
        J[:, k] = (flux(Up) - flux(Um)) / (2 * step)
    return J


# Output --------------------------------------------------------------------


def snapshot_rows(grid: FieldGrid) -> np.ndarray:
    """Per-cell rows ``x[, y], n+, u+x, u+y, n-, u-x, u-y, V``."""
    coords = [c.ravel() for c in grid.coordinates()]
    cols = coords + [
        grid.n_plus.ravel(),
        grid.u_plus[..., 0].ravel(),
        grid.u_plus[..., 1].ravel(),
        grid.n_minus.ravel(),
        grid.u_minus[..., 0].ravel(),
        grid.u_minus[..., 1].ravel(),
        grid.V.ravel(),
    ]
    return np.column_stack(cols)


def snapshot_header(grid: FieldGrid) -> list[str]:
    names = ["x", "y"][: grid.dim]
    return names + ["n_plus", "u_plus_x", "u_plus_y", "n_minus", "u_minus_x", "u_minus_y", "V"]


def write_snapshot_csv(path, grid: FieldGrid, scales: PhysicalScales, comments: dict | None = None) -> None:
    """CSV snapshot with a ``#`` comment block carrying units and constants."""
    meta = {
        "time": grid.time,
        "units": "reduced: c = kT = hbar = 1" if scales == PhysicalScales.reduced(scales.tau0, scales.gamma) else "physical",
        "c": scales.c,
        "kT": scales.kT,
        "hbar": scales.hbar,
        "n_T": scales.n_T,
    }
    meta.update(comments or {})
    write_csv(path, snapshot_header(grid), snapshot_rows(grid), meta)


