"""
Angular moments of the Fermi-Dirac integrals.

    I_N^s(A, B) = (1/pi) int_0^pi cos(N t) phi_s(A + B cos t) dt,   B >= 0

is evaluated by Gauss-Legendre quadrature (the reference path), by its
power series in B, and by its two large-(A, B) asymptotes: the
Maxwell-Boltzmann form ``e^A I_N(B)`` below the critical line A = -B and the
degenerate form ``R^s F_N^s(psi)`` above it, where (R, psi) are polar
coordinates of (A, B).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import ConvergenceError, DomainError
from .special_functions import fermi_phi

# Dispatch thresholds of `kernel`; validated by the cross-method tests.
SERIES_MAX_B = 1.0
SERIES_MAX_ABS_A = 2.0
MB_MARGIN = 25.0
DEGENERATE_RADIUS = 1e4

PANEL_ORDER = 20
MAX_PANELS = 512
GL_MAX_ORDER = 1024
SERIES_MAX_TERMS = 300

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class KernelArgs:
    N: int
    s: float
    A: float
    B: float

    def __post_init__(self):
        if self.N < 0:
            raise DomainError("harmonic index N must be >= 0")
        if not self.B >= 0:
            raise DomainError("B must be >= 0")


@lru_cache(maxsize=None)
def _gauss_legendre_unit(n: int):
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _gauss_jacobi_unit(n: int, s: float):
    """Rule for int_0^1 g(t) (1 - t)^s dt."""
    x, w = special.roots_jacobi(n, s, 0.0)
    return 0.5 * (x + 1.0), w * 0.5 ** (s + 1.0)


def cutoff_angle(A, B):
    """Angle ``C`` beyond which ``A + B cos t`` is negative.

    ``arccos(-A/B)`` for -B < A < B and ``pi`` for A >= B.

    Raises
    ------
    DomainError
        If ``A <= -B`` (no positive part).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(A <= -B):
        raise DomainError("cutoff_angle requires A > -B")
    with np.errstate(divide="ignore", invalid="ignore"):
        C = np.where(A >= B, np.pi, np.arccos(np.clip(-A / B, -1.0, 1.0)))
    return float(C) if C.ndim == 0 else C


# Breakpoints sit where the argument A + B cos t equals +L, 0, -L: phi_s is
# polynomial-like above +L, exponentially small below -L, and varies on an
# O(1) scale in between.
_BREAK_LEVEL = 40.0


def _breakpoints(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Angles where A + B cos t crosses (L, 0, -L); shape (M, 3), nondecreasing."""
    levels = np.array([_BREAK_LEVEL, 0.0, -_BREAK_LEVEL])
    safe_b = np.where(B > 0, B, 1.0)[:, None]
    with np.errstate(invalid="ignore", over="ignore"):
        theta = np.arccos(np.clip((levels[None, :] - A[:, None]) / safe_b, -1.0, 1.0))
    return np.where(B[:, None] > 0, theta, np.pi)


def _moments_at_order(orders, A, B, panels):
    """Composite Gauss-Legendre estimates for every (s, N) pair.

    Each of the four breakpoint segments is cut into ``panels`` equal panels
    carrying a fixed PANEL_ORDER-point rule (low-order nodes are accurate to
    round-off, unlike very high-order ones).

    Returns (values, scale) with values[k] for orders[k] = (s, N) and scale the
    integral of |phi_s| (used for the relative stopping test).
    """
    t, w = _gauss_legendre_unit(PANEL_ORDER)
    seg = np.concatenate([np.zeros((A.size, 1)), _breakpoints(A, B), np.full((A.size, 1), np.pi)], axis=1)
    seg_left = seg[:, :-1]
    seg_width = np.diff(seg, axis=1)
    used = np.any(seg_width > 0, axis=0)
    seg_left, seg_width = seg_left[:, used], seg_width[:, used]
    frac = np.arange(panels) / panels
    left = (seg_left[:, :, None] + seg_width[:, :, None] * frac).reshape(A.size, -1, 1)
    width = np.repeat(seg_width / panels, panels, axis=1)[:, :, None]
    theta = (left + width * t).reshape(A.size, -1)
    weight = (width * w).reshape(A.size, -1) / np.pi
    arg = A[:, None] + B[:, None] * np.cos(theta)
    phis = {s: fermi_phi(s, arg) for s in sorted({s for s, _ in orders})}
    vals = np.empty((len(orders), A.size))
    for k, (s, N) in enumerate(orders):
        vals[k] = np.sum(weight * np.cos(N * theta) * phis[s], axis=1)
    scale = np.max(np.stack([np.sum(weight * np.abs(p), axis=1) for p in phis.values()]), axis=0)
    return vals, scale


def angular_moments(orders, A, B, tol: float = 1e-12, rtol: float = 1e-14):
    """Quadrature values of ``I_N^s(A, B)`` for several (s, N) pairs at once.

    The number of composite panels is doubled until two successive estimates
    differ by less than ``max(min(tol, rtol * scale), 64 eps scale)`` for
    every pair, where ``scale`` is the integral of ``|phi_s|``.  The eps floor
    keeps the test attainable when the moments are large.

    Parameters
    ----------
    orders : sequence of (s, N)
    A, B : array_like
        Broadcastable multiplier arrays, B >= 0.

    Returns
    -------
    numpy.ndarray
        Shape ``(len(orders),) + broadcast(A, B).shape``.
    """
    orders = [(float(s), int(N)) for s, N in orders]
    A, B = np.broadcast_arrays(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
    shape = A.shape
    A = A.ravel()
    B = B.ravel()
    if np.any(~(B >= 0)):
        raise DomainError("B must be >= 0")
    out = np.empty((len(orders), A.size))
    # Exact values on the axis B = 0: I_N^s(A, 0) = phi_s(A) delta_N0.
    axis = B == 0
    if np.any(axis):
        for k, (s, N) in enumerate(orders):
            out[k, axis] = fermi_phi(s, A[axis]) if N == 0 else 0.0
    active = np.nonzero(~axis)[0]
    if not active.size:
        return out.reshape((len(orders),) + shape)
    prev, _ = _moments_at_order(orders, A[active], B[active], 1)
    panels = 1
    while active.size:
        panels *= 2
        if panels > MAX_PANELS:
            raise ConvergenceError(
                f"angular quadrature did not converge at {active.size} points "
                f"(e.g. A={A[active[0]]}, B={B[active[0]]})"
            )
        cur, scale = _moments_at_order(orders, A[active], B[active], panels)
        thresh = np.maximum(np.minimum(tol, rtol * scale), 64 * _EPS * scale)
        ok = np.all(np.abs(cur - prev) <= thresh, axis=0)
        out[:, active[ok]] = cur[:, ok]
        active = active[~ok]
        prev = cur[:, ~ok]
    return out.reshape((len(orders),) + shape)


def kernel_quadrature(N: int, s: float, A: float, B: float, tol: float = 1e-12) -> float:
    """``I_N^s(A, B)`` by adaptive Gauss-Legendre quadrature (requires s > 0)."""
    if s <= 0:
        raise DomainError("kernel_quadrature requires s > 0")
    if tol <= 0:
        raise DomainError("tol must be positive")
    KernelArgs(N, s, A, B)
    return float(angular_moments([(s, N)], A, B, tol=tol)[0])


def kernel_series(N: int, s: float, A: float, B: float, n_max: int | None = None) -> float:
    """Power series of ``I_N^s`` in B:

        sum_n phi_(s-2n-N)(A) / (n! (N+n)!) * (B/2)^(N+2n).

    With ``n_max=None`` terms are added until two consecutive ones drop below
    1e-17 of the largest partial magnitude.  The series converges for
    B < sqrt(A^2 + pi^2), the distance from A to the nearest singularity of
    phi_s.

    Raises
    ------
    ConvergenceError
        Term overflow or no convergence within ``SERIES_MAX_TERMS`` terms.
    """
    KernelArgs(N, s, A, B)
    if B == 0.0:
        return float(fermi_phi(s, A)) if N == 0 else 0.0
    log_half_b = math.log(B) - math.log(2.0)
    total = 0.0
    biggest = 0.0
    small = 0
    limit = SERIES_MAX_TERMS if n_max is None else n_max
    for n in range(limit + 1):
        weight = math.exp((N + 2 * n) * log_half_b - math.lgamma(n + 1) - math.lgamma(N + n + 1))
        term = fermi_phi(s - 2 * n - N, A) * weight
        if not math.isfinite(term):
            raise ConvergenceError(f"series term overflow at n={n} for A={A}, B={B}")
        total += term
        biggest = max(biggest, abs(total), abs(term))
        if n_max is not None:
            continue
        if abs(term) <= 1e-17 * biggest:
            small += 1
            if small >= 2:
                return total
        else:
            small = 0
    if n_max is not None:
        return total
    raise ConvergenceError(f"series for I_{N}^{s}({A}, {B}) did not converge")


def kernel_series_double(N: int, s: float, A: float, B: float, n_terms: int = 60, k_terms: int = 80) -> float:
    """Double power series in (A, B) using h(s); valid for |A| < pi.

    Test oracle only.
    """
    from .special_functions import series_coefficient

    if abs(A) >= math.pi:
        raise DomainError("double series requires |A| < pi")
    total = 0.0
    for n in range(n_terms):
        bpow = (N + 2 * n) * (math.log(B) - math.log(2.0)) if B > 0 else (0.0 if N + 2 * n == 0 else -math.inf)
        if bpow == -math.inf:
            continue
        inner = 0.0
        for k in range(k_terms):
            inner += series_coefficient(s - N - 2 * n - k) * A ** k / math.factorial(k)
        total += inner * math.exp(bpow - math.lgamma(n + 1) - math.lgamma(N + n + 1))
    return total


def kernel_mb_asymptote(N: int, A: float, B: float) -> float:
    """Maxwell-Boltzmann asymptote ``e^A I_N(B)``, valid below the critical line."""
    if not A < -B:
        raise DomainError("MB asymptote requires A < -B")
    KernelArgs(N, 1.0, A, B)
    return float(math.exp(A + B) * special.ive(N, B))


def psi_from_cutoff(C):
    """Polar angle psi in (pi/4, 3pi/4) with cutoff C = arccos(-cot psi)."""
    return 0.5 * np.pi + np.arctan(np.cos(C))


def cutoff_from_psi(psi):
    psi = np.asarray(psi, dtype=float)
    return np.where(psi <= 0.25 * np.pi, np.pi, np.arccos(np.clip(-1.0 / np.tan(np.maximum(psi, 1e-300)), -1.0, 1.0)))


def _degenerate_full(N: int, s: float, psi: float, tol: float) -> float:
    """F_N^s for 0 <= psi <= pi/4 (no cutoff inside [0, pi])."""
    a, b = math.cos(psi), math.sin(psi)
    prev = None
    n = 16
    while n <= GL_MAX_ORDER:
        t, w = _gauss_legendre_unit(n)
        theta = np.pi * t
        base = np.maximum(a + b * np.cos(theta), 0.0)
        val = np.pi * np.sum(w * np.cos(N * theta) * base ** s)
        scale = np.pi * np.sum(w * base ** s)
        if prev is not None and abs(val - prev) <= tol * scale:
            return val / (math.pi * math.gamma(s + 1.0))
        prev = val
        n *= 2
    raise ConvergenceError(f"degenerate kernel quadrature did not converge at psi={psi}")


def _degenerate_cut(N: int, s: float, C: float, tol: float) -> float:
    """F_N^s for psi > pi/4, parametrized by its cutoff C in (0, pi).

    Uses sin(psi)^s (cos t - cos C)^s with the (C - t)^s factor absorbed in a
    Gauss-Jacobi weight, so small C keeps full relative accuracy.
    """
    sin_psi = 1.0 / math.sqrt(1.0 + math.cos(C) ** 2)
    prev = None
    n = 16
    while n <= GL_MAX_ORDER:
        t, w = _gauss_jacobi_unit(n, float(s))
        theta = C * t
        v = 0.5 * (C - theta)
        smooth = np.sin(0.5 * (C + theta)) * np.sinc(v / np.pi)
        val = C ** (s + 1.0) * np.sum(w * np.cos(N * theta) * smooth ** s)
        scale = C ** (s + 1.0) * np.sum(w * smooth ** s)
        if prev is not None and abs(val - prev) <= tol * scale:
            return sin_psi ** s * val / (math.pi * math.gamma(s + 1.0))
        prev = val
        n *= 2
    raise ConvergenceError(f"degenerate kernel quadrature did not converge at C={C}")


def degenerate_kernel(N: int, s: float, psi: float, tol: float = 1e-14) -> float:
    """Degenerate-gas kernel

        F_N^s(psi) = 1/(pi Gamma(s+1)) int_0^C(psi) cos(N t) (cos psi + sin psi cos t)^s dt,

    with ``C = pi`` for psi <= pi/4 and ``arccos(-cot psi)`` for psi in (pi/4, 3pi/4).
    """
    if not 0.0 <= psi < 0.75 * math.pi:
        raise DomainError("degenerate_kernel requires 0 <= psi < 3pi/4")
    if psi <= 0.25 * math.pi:
        return _degenerate_full(N, s, psi, tol)
    return _degenerate_cut(N, s, float(cutoff_from_psi(psi)), tol)


def degenerate_kernel_from_cutoff(N: int, s: float, C: float, tol: float = 1e-14) -> float:
    """Same as `degenerate_kernel` for psi >= pi/4, addressed by the cutoff C."""
    if not 0.0 < C <= math.pi:
        raise DomainError("cutoff must lie in (0, pi]")
    return _degenerate_cut(N, s, C, tol)


def kernel_degenerate_asymptote(N: int, s: float, A: float, B: float) -> float:
    """``R^s F_N^s(psi)`` with A = R cos psi, B = R sin psi (requires A > -B)."""
    if not A > -B:
        raise DomainError("degenerate asymptote requires A > -B")
    R = math.hypot(A, B)
    psi = math.atan2(B, A)
    if psi <= 0.25 * math.pi:
        F = _degenerate_full(N, s, psi, 1e-14)
    else:
        F = _degenerate_cut(N, s, float(cutoff_angle(A, B)), 1e-14)
    return R ** s * F


def kernel(args: KernelArgs) -> float:
    """User-facing ``I_N^s(A, B)`` with regime dispatch.

    series            B <= SERIES_MAX_B and |A| <= SERIES_MAX_ABS_A
    MB asymptote      A < -B - MB_MARGIN
    degenerate form   sqrt(A^2 + B^2) > DEGENERATE_RADIUS and A > -B
    quadrature        otherwise
    """
    N, s, A, B = args.N, args.s, args.A, args.B
    if B <= SERIES_MAX_B and abs(A) <= SERIES_MAX_ABS_A:
        try:
            return kernel_series(N, s, A, B)
        except ConvergenceError:
            pass
    if A < -B - MB_MARGIN:
        return kernel_mb_asymptote(N, A, B)
    if math.hypot(A, B) > DEGENERATE_RADIUS and A > -B:
        return kernel_degenerate_asymptote(N, s, A, B)
    return kernel_quadrature(N, s, A, B)


def chebyshev_moment(coeffs, s: float, A: float, B: float) -> float:
    """``(1/pi) int_0^pi r(cos t) phi_s(A + B cos t) dt`` for r given in the
    Chebyshev basis, ``r = sum_N coeffs[N] T_N``.

    Each ``T_N(cos t) = cos(N t)``, so the integral is ``sum_N coeffs[N] I_N^s``.
    """
    coeffs = [float(c) for c in coeffs]
    orders = [(s, N) for N, c in enumerate(coeffs) if c != 0.0]
    if not orders:
        return 0.0
    vals = angular_moments(orders, A, B)
    return float(sum(coeffs[N] * v for (_, N), v in zip(orders, vals[:, ...].ravel())))


def power_to_chebyshev(poly_coeffs) -> np.ndarray:
    """Convert power-basis coefficients (lowest degree first) to Chebyshev."""
    return np.polynomial.chebyshev.poly2cheb(np.asarray(poly_coeffs, dtype=float))
