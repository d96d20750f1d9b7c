"""
Fermi-Dirac integrals and modified Bessel helpers.

The complete Fermi-Dirac integral of order ``s`` is

    phi_s(x) = 1/Gamma(s) * int_0^inf t^(s-1) / (exp(t - x) + 1) dt = -Li_s(-exp(x)),

and the right-hand side continues it to every real order.  Derivatives lower
the order by one, ``phi_s' = phi_(s-1)``, so ``phi_0`` is the logistic function
and ``phi_(-k)`` its k-th derivative.

Evaluation paths
----------------
* integer s >= 1 : power series in exp(x) for x <= -1, Taylor series about 0
  for |x| < 1, reflection ``phi_s(x) = -(-1)^s phi_s(-x) + poly_s(x)`` for x >= 1.
* integer s <= 0 : polynomials in the logistic function for small |s|, the
  partial-fraction (pole) sum of the logistic function for larger |s|.
* other real s > 0 : adaptive quadrature of the defining integral.
* other real s <= 0 : Taylor series for |x| < 3, power series for x <= -1.

All functions are pure and accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError, DomainError

LN2 = math.log(2.0)

# Series terms are dropped once below this fraction of the running sum.
_EPS = np.finfo(float).eps
_BESSEL_ASYMPTOTIC_B = 1e6
SERIES_RTOL = 1e-17
SERIES_MAX_TERMS = 4000
# Beyond this index the Taylor terms use the reflected (overflow-free) form.
_SERIES_DIRECT_TERMS = 60

# Orders -k with k <= _POLY_MAX_K use the logistic polynomials.
_POLY_MAX_K = 6


def series_coefficient(s: float) -> float:
    """Return ``h(s) = -Li_s(-1) = (1 - 2^(1-s)) zeta(s)``.

    ``h(1)`` is the removable-singularity value ``ln 2``.
    """
    s = float(s)
    if s == 1.0:
        return LN2
    if s == 0.0:
        return 0.5
    return float((1.0 - 2.0 ** (1.0 - s)) * special.zeta(s))


@lru_cache(maxsize=256)
def _taylor_coefficients(s: float, nterms: int) -> np.ndarray:
    """Coefficients h(s - k) / k! of the Taylor series of phi_s about 0."""
    return np.array([series_coefficient(s - k) / math.factorial(k) for k in range(nterms)])


def _is_integer(s: float) -> bool:
    return float(s).is_integer()


# ---------------------------------------------------------------------------
# integer orders s >= 1
# ---------------------------------------------------------------------------

def _phi_pos_left(s: int, x: np.ndarray) -> np.ndarray:
    """Alternating power series sum_m (-1)^(m+1) e^(m x) / m^s, for x <= -1."""
    z = np.exp(x)
    if z.size == 0:
        return z
    zmax = float(np.max(z))
    # Terms needed so that zmax^m / m^s < SERIES_RTOL * zmax / 2.
    n_terms = 1 if zmax == 0.0 else max(2, min(64, int(math.ceil(math.log(SERIES_RTOL / 2) / math.log(zmax))) + 1))
    m = np.arange(1, n_terms + 1)
    coeffs = np.where(m % 2, 1.0, -1.0) / m.astype(float) ** s
    # Horner in z, lowest power first: z * (c1 + z (c2 + ...)).
    out = np.full_like(z, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * z + c
    return out * z


def _phi_taylor(s: float, x: np.ndarray, nterms: int = 48) -> np.ndarray:
    coeffs = _taylor_coefficients(float(s), nterms)
    return np.polynomial.polynomial.polyval(x, coeffs)


def _reflection_polynomial(s: int, x: np.ndarray) -> np.ndarray:
    """poly_s(x) = 2 sum_k h(2k) x^(s-2k) / (s-2k)!  (0 <= 2k <= s)."""
    out = np.zeros_like(x)
    for k in range(s // 2 + 1):
        p = s - 2 * k
        out += 2.0 * series_coefficient(2 * k) * x ** p / math.factorial(p)
    return out


def _phi_positive_integer(s: int, x: np.ndarray) -> np.ndarray:
    if s == 1:
        return np.logaddexp(0.0, x)
    out = np.empty_like(x)
    left = x <= -1.0
    mid = np.abs(x) < 1.0
    right = x >= 1.0
    if left.any():
        out[left] = _phi_pos_left(s, x[left])
    if mid.any():
        out[mid] = _phi_taylor(s, x[mid])
    if right.any():
        xr = x[right]
        sign = -1.0 if s % 2 == 0 else 1.0
        out[right] = sign * _phi_pos_left(s, -xr) + _reflection_polynomial(s, xr)
    return out


# ---------------------------------------------------------------------------
# integer orders s <= 0
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _logistic_polynomial(k: int) -> np.ndarray:
    """Power-basis coefficients of P_k with phi_(-k)(x) = P_k(sigma(x))."""
    p = np.array([0.0, 1.0])
    d = np.array([0.0, 1.0, -1.0])  # sigma' = sigma (1 - sigma)
    for _ in range(k):
        p = np.polynomial.polynomial.polymul(np.polynomial.polynomial.polyder(p), d)
    return p


def _phi_pole_sum(k: int, x: np.ndarray) -> np.ndarray:
    """k-th derivative of the logistic function from its partial fractions.

    phi_(-k)(x) = 2 (-1)^k k! sum_{j>=0} Re[(x - i pi (2j+1))^(-(k+1))]
    """
    lgk = math.lgamma(k + 1)
    out = np.zeros_like(x)
    first = None
    for j in range(10_000):
        b = math.pi * (2 * j + 1)
        r = np.hypot(x, b)
        arg = np.arctan2(-b, x)
        mag = np.exp(lgk - (k + 1) * np.log(r))
        out += mag * np.cos((k + 1) * arg)
        if first is None:
            first = mag
        elif np.all(mag <= SERIES_RTOL * first):
            break
    else:  # pragma: no cover - k >= 7 converges in a handful of terms
        raise ConvergenceError(f"pole sum for order {-k} did not converge")
    return (2.0 if k % 2 == 0 else -2.0) * out


def _phi_li_series(s: float, x: np.ndarray) -> np.ndarray:
    """-Li_s(-e^x) by its defining power series; valid for x < 0."""
    out = np.zeros_like(x)
    scale = np.zeros_like(x)
    for m in range(1, SERIES_MAX_TERMS + 1):
        term = np.exp(m * x - s * math.log(m))
        out += term if m % 2 else -term
        scale = np.maximum(scale, term)
        if m > 2 and np.all(term <= SERIES_RTOL * scale):
            return out
    raise ConvergenceError(f"polylog series for order {s} did not converge")


def _phi_nonpositive_integer(k: int, x: np.ndarray) -> np.ndarray:
    """phi_(-k)(x) for k >= 0."""
    if k == 0:
        return special.expit(x)
    parity = 1.0 if k % 2 == 1 else -1.0  # phi_(-k)(-x) = (-1)^(k+1) phi_(-k)(x)
    if k <= _POLY_MAX_K:
        xs = -np.abs(x)
        val = np.polynomial.polynomial.polyval(special.expit(xs), _logistic_polynomial(k))
        return np.where(x > 0, parity * val, val)
    out = np.empty_like(x)
    near = np.abs(x) <= k
    if near.any():
        out[near] = _phi_pole_sum(k, x[near])
    far = ~near
    if far.any():
        xf = x[far]
        val = _phi_li_series(-k, -np.abs(xf))
        out[far] = np.where(xf > 0, parity * val, val)
    return out


# ---------------------------------------------------------------------------
# non-integer orders
# ---------------------------------------------------------------------------

def _phi_integral_scalar(s: float, x: float) -> float:
    def integrand(t):
        return t ** (s - 1.0) * special.expit(x - t)

    split = max(x, 0.0) + 1.0
    head, _ = integrate.quad(integrand, 0.0, split, epsabs=0.0, epsrel=1e-13, limit=400)
    tail, _ = integrate.quad(integrand, split, np.inf, epsabs=0.0, epsrel=1e-13, limit=400)
    return (head + tail) / math.gamma(s)


def _phi_noninteger(s: float, x: np.ndarray) -> np.ndarray:
    if s > 0:
        return np.array([_phi_integral_scalar(s, float(v)) for v in x.ravel()]).reshape(x.shape)
    out = np.empty_like(x)
    left = x <= -1.0
    mid = (~left) & (np.abs(x) < 3.0)
    if np.any(~(left | mid)):
        raise DomainError(f"phi_s with non-integer s={s} <= 0 is only available for x < 3")
    if left.any():
        out[left] = _phi_li_series(s, x[left])
    if mid.any():
        out[mid] = np.array([fermi_phi_series(s, float(v)) for v in x[mid]])
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def fermi_phi(s: float, x):
    """Complete Fermi-Dirac integral ``phi_s(x) = -Li_s(-e^x)``.

    Parameters
    ----------
    s : float
        Order. Every integer is supported for all real ``x``; non-integer
        positive orders go through quadrature of the defining integral.
    x : float or array_like
        Argument.

    Returns
    -------
    float or numpy.ndarray
        Same shape as ``x``.
    """
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    s = float(s)
    if _is_integer(s):
        si = int(s)
        out = _phi_positive_integer(si, xa) if si >= 1 else _phi_nonpositive_integer(-si, xa)
    else:
        out = _phi_noninteger(s, xa)
    return float(out[0]) if scalar else out


def _series_term_reflected(s: float, k: int, x: float) -> float:
    """``h(s-k) x^k / k!`` for large k, free of overflow.

    With z = 1 - s + k the functional equation of zeta gives
    h(s-k) = -2 cos(pi z/2) Gamma(z) zeta(z) (1 - 2^-z) pi^-z, so the term
    is evaluated with its growing and decaying factors combined in logs.
    """
    if x == 0.0:
        return 0.0
    z = 1.0 - s + k
    trig = math.cos(0.5 * math.pi * z)
    if _is_integer(z) and int(z) % 2 == 1:
        return 0.0
    log_mag = math.lgamma(z) - math.lgamma(k + 1) - z * math.log(math.pi) + k * math.log(abs(x))
    sign = -1.0 if (x < 0 and k % 2) else 1.0
    return -2.0 * trig * float(special.zeta(z)) * (1.0 - 2.0 ** -z) * math.exp(log_mag) * sign


def fermi_phi_series(s: float, x: float, rtol: float = SERIES_RTOL) -> float:
    """Taylor series ``sum_k h(s-k) x^k / k!`` of phi_s about the origin.

    Summation stops once two consecutive terms fall below ``rtol`` times the
    partial sum (two, because h vanishes at the negative even integers).

    Raises
    ------
    DomainError
        If ``|x| >= pi``, outside the disc of convergence.
    ConvergenceError
        If the tolerance is not met within ``SERIES_MAX_TERMS`` terms.
    """
    x = float(x)
    if abs(x) >= math.pi:
        raise DomainError(f"Taylor series of phi_s converges only for |x| < pi, got x={x}")
    total = 0.0
    small = 0
    xk_over_kfact = 1.0
    for k in range(SERIES_MAX_TERMS):
        if k > 0:
            xk_over_kfact *= x / k
        if k < _SERIES_DIRECT_TERMS:
            term = series_coefficient(s - k) * xk_over_kfact
        else:
            term = _series_term_reflected(s, k, x)
        total += term
        if abs(term) <= rtol * max(abs(total), 1e-300):
            small += 1
            if small >= 2:
                return total
        else:
            small = 0
    raise ConvergenceError(f"Taylor series for phi_{s}({x}) did not converge")


def fermi_phi_inverse(y, tol: float = 1e-14, max_iter: int = 100):
    """Inverse of phi_2 on (0, inf).

    Safeguarded Newton iteration with derivative phi_1, started inside the
    bracket [ln y, ln 2y] for y <= 1 and [ln y, sqrt(2y)] otherwise (both ends
    follow from the two asymptotic branches of phi_2).

    Raises
    ------
    DomainError
        If any ``y <= 0``.
    """
    scalar = np.ndim(y) == 0
    ya = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ya > 0)):
        raise DomainError("fermi_phi_inverse requires y > 0")
    lo = np.log(ya)
    hi = np.where(ya <= 1.0, np.log(2.0 * ya), np.sqrt(2.0 * ya))
    x = np.where(ya <= 1.0, lo + 0.5 * (hi - lo), np.maximum(np.sqrt(2.0 * ya) - 1.0, lo))
    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        f = fermi_phi(2, x) - ya
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        step = f / fermi_phi(1, x)
        xn = x - step
        outside = (xn <= lo) | (xn >= hi)
        xn = np.where(outside, 0.5 * (lo + hi), xn)
        done = np.abs(xn - x) <= tol * np.maximum(1.0, np.abs(x))
        x = xn
        if np.all(done):
            break
    else:
        raise ConvergenceError("fermi_phi_inverse did not converge")
    return float(x[0]) if scalar else x


def bessel_i(N: int, x):
    """Modified Bessel function of the first kind ``I_N(x)``."""
    return special.iv(N, x)


def bessel_ratio(B):
    """``I_1(B) / I_0(B)``, evaluated with exponentially scaled Bessels."""
    B = np.asarray(B, dtype=float)
    big = B > _BESSEL_ASYMPTOTIC_B
    safe = np.where(big, 1.0, B)
    inv = 1.0 / np.where(big, B, 1.0)
    # Hankel expansion; the neglected O(B^-3) term is below round-off here.
    return np.where(big, 1.0 - 0.5 * inv - 0.125 * inv ** 2, special.ive(1, safe) / special.ive(0, safe))


def bessel_ratio_inverse(u, tol: float = 1e-15, max_iter: int = 60):
    """Solve ``I_1(B)/I_0(B) = u`` for ``B >= 0`` given ``0 <= u < 1``.

    Newton iteration on the ratio r(B) with r' = 1 - r/B - r^2, seeded with
    the rational approximation B ~ u (2 - u^2) / (1 - u^2).
    """
    scalar = np.ndim(u) == 0
    ua = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((ua < 0) | (ua >= 1)):
        raise DomainError("bessel_ratio_inverse requires 0 <= u < 1")
    B = ua * (2.0 - ua ** 2) / (1.0 - ua ** 2)
    done = ua == 0
    for _ in range(max_iter):
        r = bessel_ratio(B)
        with np.errstate(divide="ignore", invalid="ignore"):
            dr = np.where(B > 1e-8, 1.0 - r / B - r ** 2, 0.5 - 3.0 * B ** 2 / 16.0)
            # 1 - r/B - r^2 cancels catastrophically at large B.
            dr = np.where(B > 1e4, 0.5 / B ** 2 + 0.25 / B ** 3 + 0.375 / B ** 4, dr)
        Bn = np.where(done, B, np.maximum(B - (r - ua) / dr, 0.5 * B))
        # The residual floor covers the few-ulp error of the ratio itself; it
        # matters most at large B, where dB/du ~ 2 B^2.
        done |= (np.abs(Bn - B) <= tol * np.maximum(B, 1e-300)) | (np.abs(r - ua) <= 8.0 * _EPS)
        B = Bn
        if np.all(done):
            break
    else:
        raise ConvergenceError("bessel_ratio_inverse did not converge")
    B = np.where(ua == 0, 0.0, B)
    return float(B[0]) if scalar else B


def bessel_power_coefficient(N: int, j: int) -> float:
    """``(1/pi) int_0^pi cos(N t) cos(t)^j dt``, which equals ``I_N^{(j)}(0)``.

    Nonzero only for ``j = N + 2n``, where it is ``j! / (2^j n! (N+n)!)``.
    Note that a frequently quoted form ``2^-(2n+N) / (N+n)!`` drops the
    ``j!/n!`` factor and is wrong for j >= 2.
    """
    N, j = abs(int(N)), int(j)
    if j < N or (j - N) % 2:
        return 0.0
    n = (j - N) // 2
    return math.exp(math.lgamma(j + 1) - j * LN2 - math.lgamma(n + 1) - math.lgamma(N + n + 1))
