"""Scalar special functions: Airy Ai/Ai', erfc, and the chi/gamma family.

All evaluators accept scalars or arrays and return the same shape.  Each
function is split into branches (series, quadrature, asymptotic); the
branch layout is exposed through :data:`BRANCHES` so tests can probe the
switch points for continuity.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special

from .errors import DomainError, OutOfRangeError

SQRT_PI = math.sqrt(math.pi)
TWO_OVER_SQRT_PI = 2.0 / SQRT_PI

# Ai(0) and -Ai'(0)
AI0 = 3.0 ** (-2.0 / 3.0) / math.gamma(2.0 / 3.0)
AIP0 = -(3.0 ** (-1.0 / 3.0)) / math.gamma(1.0 / 3.0)


@dataclass(frozen=True)
class EvalBranch:
    """One piece of a piecewise evaluator.

    ``switch_point`` is the argument at which this branch takes over from
    the previous one (in the natural variable of the function).
    """

    kind: str
    switch_point: float
    terms_used: int

    def __post_init__(self):
        if self.kind not in ("series", "quadrature", "asymptotic"):
            raise ValueError(f"unknown branch kind {self.kind!r}")
        if not self.switch_point > 0:
            raise ValueError("switch_point must be positive")
        if self.terms_used < 1:
            raise ValueError("terms_used must be >= 1")


# Airy: Maclaurin series up to AIRY_SERIES_MAX, then the steepest-descent
# moment integrals (Gauss-Legendre), then their asymptotic series.
AIRY_SERIES_MAX = 2.5
AIRY_NEG_LIMIT = -8.0
MACLAURIN_TERMS = 40
MOMENT_QUAD_NODES = 128
MOMENT_QUAD_VMAX = 8.5
MOMENT_ASYM_MIN = 9.0  # in the moment variable s (= sqrt of the Airy argument)
MOMENT_ASYM_TERMS = 16

# chi/gamma: closed form, then a Stieltjes-type integral by generalized
# Gauss-Laguerre quadrature, then the large-x series.
CHI_CLOSED_MAX = 2.0
CHI_SWITCH = 60.0
CHI_LAGUERRE_NODES = 64
CHI_ASYM_TERMS = 36

BRANCHES = {
    "airy": (
        EvalBranch("series", AIRY_SERIES_MAX, MACLAURIN_TERMS),
        EvalBranch("quadrature", AIRY_SERIES_MAX, MOMENT_QUAD_NODES),
        EvalBranch("asymptotic", MOMENT_ASYM_MIN ** 2, MOMENT_ASYM_TERMS),
    ),
    "airy_moment": (
        EvalBranch("quadrature", math.sqrt(AIRY_SERIES_MAX), MOMENT_QUAD_NODES),
        EvalBranch("asymptotic", MOMENT_ASYM_MIN, MOMENT_ASYM_TERMS),
    ),
    "chi": (
        EvalBranch("series", CHI_CLOSED_MAX, 1),
        EvalBranch("quadrature", CHI_CLOSED_MAX, CHI_LAGUERRE_NODES),
        EvalBranch("asymptotic", CHI_SWITCH, CHI_ASYM_TERMS),
    ),
}


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# Airy functions


def _airy_maclaurin(x):
    """Ai and Ai' by their Maclaurin series (x moderate)."""
    x = np.asarray(x, dtype=float)
    x3 = x ** 3
    f = np.ones_like(x)
    g = x.copy()
    fp = np.zeros_like(x)
    gp = np.ones_like(x)
    tf = np.ones_like(x)
    tg = x.copy()
    tfp = 0.5 * x * x
    tgp = x3 / 3.0
    fp += tfp
    gp += tgp
    for k in range(1, MACLAURIN_TERMS):
        tf = tf * x3 / ((3 * k - 1) * (3 * k))
        tg = tg * x3 / ((3 * k) * (3 * k + 1))
        f += tf
        g += tg
        if k >= 2:
            tfp = tfp * x3 / ((3 * k - 3) * (3 * k - 1))
            tgp = tgp * x3 / ((3 * k - 2) * (3 * k))
            fp += tfp
            gp += tgp
    ai = AI0 * f + AIP0 * g
    aip = AI0 * fp + AIP0 * gp
    return ai, aip


@lru_cache(maxsize=None)
def _moment_nodes():
    v, w = np.polynomial.legendre.leggauss(MOMENT_QUAD_NODES)
    v = 0.5 * MOMENT_QUAD_VMAX * (v + 1.0)
    w = 0.5 * MOMENT_QUAD_VMAX * w * np.exp(-v * v)
    return v, w


@lru_cache(maxsize=None)
def _moment_series_coeffs(k):
    n = np.arange(MOMENT_ASYM_TERMS)
    lg = special.gammaln((k + 1) / 2.0 + 3 * n) - special.gammaln(2 * n + 1) - n * math.log(9.0)
    return (-1.0) ** n * np.exp(lg)


def moment_series(k, eps):
    """Power series S_k(eps) with M_k(s) = s^{-(k+1)/2} S_k(s^{-3}) / 2."""
    c = _moment_series_coeffs(int(k))
    eps = np.asarray(eps, dtype=float)
    out = np.zeros_like(eps)
    for cn in c[::-1]:
        out = out * eps + cn
    return out


def airy_moment(k, s):
    """M_k(s) = int_0^inf t^k cos(t^3/3) exp(-s t^2) dt for s > 0.

    These integrals carry the exponentially scaled Airy functions without
    cancellation: exp(zeta) Ai(u) = M_0(sqrt u)/pi.
    """
    s, scalar = _as_array(s)
    if np.any(~(s > 0)):
        raise DomainError("airy_moment needs s > 0")
    out = np.empty_like(s)
    big = s >= MOMENT_ASYM_MIN
    if np.any(big):
        sb = s[big]
        out[big] = 0.5 * sb ** (-(k + 1) / 2.0) * moment_series(k, sb ** -3)
    small = ~big
    if np.any(small):
        ss = s[small]
        v, w = _moment_nodes()
        phase = np.cos(np.outer(ss ** -1.5, v ** 3) / 3.0)
        out[small] = ss ** (-(k + 1) / 2.0) * (phase @ (w * v ** k))
    return _ret(out, scalar)


def _check_airy_arg(x):
    if np.any(~np.isfinite(x)):
        raise DomainError("Airy argument must be finite")
    if np.any(x < AIRY_NEG_LIMIT):
        raise OutOfRangeError(f"Airy argument below supported range {AIRY_NEG_LIMIT}")


def airy_ai_scaled(x):
    """exp(2/3 x^{3/2}) Ai(x) for x >= 0 and Ai(x) for x < 0."""
    x, scalar = _as_array(x)
    _check_airy_arg(x)
    out = np.empty_like(x)
    lo = x <= AIRY_SERIES_MAX
    if np.any(lo):
        ai, _ = _airy_maclaurin(x[lo])
        xl = x[lo]
        out[lo] = ai * np.exp(2.0 / 3.0 * np.clip(xl, 0, None) ** 1.5)
    hi = ~lo
    if np.any(hi):
        out[hi] = airy_moment(0, np.sqrt(x[hi])) / math.pi
    return _ret(out, scalar)


def airy_aip_scaled(x):
    """exp(2/3 x^{3/2}) Ai'(x) for x >= 0 and Ai'(x) for x < 0."""
    x, scalar = _as_array(x)
    _check_airy_arg(x)
    out = np.empty_like(x)
    lo = x <= AIRY_SERIES_MAX
    if np.any(lo):
        _, aip = _airy_maclaurin(x[lo])
        xl = x[lo]
        out[lo] = aip * np.exp(2.0 / 3.0 * np.clip(xl, 0, None) ** 1.5)
    hi = ~lo
    if np.any(hi):
        s = np.sqrt(x[hi])
        out[hi] = -s * airy_moment(0, s) / math.pi - airy_moment(2, s) / (2.0 * math.pi * s)
    return _ret(out, scalar)


def airy_ai(x):
    """Airy function Ai(x) for x >= -8."""
    x, scalar = _as_array(x)
    sc = np.asarray(airy_ai_scaled(x))
    out = np.where(x > 0, sc * np.exp(-2.0 / 3.0 * np.clip(x, 0, None) ** 1.5), sc)
    return _ret(out, scalar)


def airy_aip(x):
    """Derivative Ai'(x) for x >= -8."""
    x, scalar = _as_array(x)
    sc = np.asarray(airy_aip_scaled(x))
    out = np.where(x > 0, sc * np.exp(-2.0 / 3.0 * np.clip(x, 0, None) ** 1.5), sc)
    return _ret(out, scalar)


# ---------------------------------------------------------------------------
# error functions


def erfc(x):
    """Complementary error function."""
    x, scalar = _as_array(x)
    if np.any(~np.isfinite(x)):
        raise DomainError("erfc argument must be finite")
    return _ret(special.erfc(x), scalar)


def erfcx(x):
    """Scaled complementary error function exp(x^2) erfc(x)."""
    x, scalar = _as_array(x)
    if np.any(~np.isfinite(x)):
        raise DomainError("erfcx argument must be finite")
    return _ret(special.erfcx(x), scalar)


# ---------------------------------------------------------------------------
# chi and gamma


@lru_cache(maxsize=None)
def _chi_series_coeffs():
    """c_m with chi(x) = sum_{m>=3} c_m x^{3/2-m} for large x."""
    n = np.arange(CHI_ASYM_TERMS + 4)
    # a_n = (-1)^n (2n-1)!! / 2^n, the coefficients of sqrt(pi x) e^x erfc(sqrt x)
    a = np.empty(n.size)
    a[0] = 1.0
    for j in range(1, n.size):
        a[j] = -a[j - 1] * (2 * j - 1) / 2.0
    m = np.arange(3, 3 + CHI_ASYM_TERMS)
    c = -TWO_OVER_SQRT_PI * (a[m] + 1.5 * a[m - 1])
    return m.astype(float), c


def _chi_asym(x, order):
    m, c = _chi_series_coeffs()
    p = 1.5 - m
    if order == 0:
        coef, power = c, p
    elif order == 1:
        coef, power = c * p, p - 1
    else:
        coef, power = c * p * (p - 1), p - 2
    # sum from the smallest terms up
    out = np.zeros_like(x)
    for cm, pm in zip(coef[::-1], power[::-1]):
        out += cm * x ** pm
    return out


def _chi_closed(x, order):
    sx = np.sqrt(x)
    e = special.erfcx(sx)
    if order == 0:
        return TWO_OVER_SQRT_PI * (x * sx + sx) - 2.0 * x * (x + 1.5) * e
    if order == 1:
        return TWO_OVER_SQRT_PI * (x * sx + 3.0 * sx + 0.5 / sx) + (-2.0 * x * x - 7.0 * x - 3.0) * e
    return (TWO_OVER_SQRT_PI * (x * sx + 5.0 * sx + 3.0 / sx - 0.25 / (x * sx))
            + (-2.0 * x * x - 11.0 * x - 10.0) * e)


@lru_cache(maxsize=None)
def _laguerre_nodes():
    s, w = special.roots_genlaguerre(CHI_LAGUERRE_NODES, 1.5)
    return s, w * (2.0 * s - 3.0)


def _chi_laguerre(x, order):
    """chi and derivatives from chi(x) = x^{-1/2} H_1(x) / pi, where
    H_n(x) = int_0^inf e^{-s} s^{3/2} (2s - 3) (x + s)^{-n} ds.

    This form has no cancellation for large x; the closed form loses
    about log10(x^4) digits.
    """
    s, w = _laguerre_nodes()
    inv = 1.0 / (x[:, None] + s[None, :])
    h1 = (inv * w).sum(axis=1)
    if order == 0:
        return x ** -0.5 * h1 / math.pi
    h2 = (inv ** 2 * w).sum(axis=1)
    if order == 1:
        return (-0.5 * x ** -1.5 * h1 - x ** -0.5 * h2) / math.pi
    h3 = (inv ** 3 * w).sum(axis=1)
    return (0.75 * x ** -2.5 * h1 + x ** -1.5 * h2 + 2.0 * x ** -0.5 * h3) / math.pi


def _chi_piece(x, order):
    """Evaluate on an array of positive x without validation."""
    out = np.empty_like(x)
    a = x <= CHI_CLOSED_MAX
    b = (~a) & (x <= CHI_SWITCH)
    c = x > CHI_SWITCH
    if np.any(a):
        out[a] = _chi_closed(x[a], order)
    if np.any(b):
        out[b] = _chi_laguerre(x[b], order)
    if np.any(c):
        out[c] = _chi_asym(x[c], order)
    return out


def _chi_eval(x, order):
    x, scalar = _as_array(x)
    if np.any(~(x > 0)) or np.any(~np.isfinite(x)):
        raise DomainError("chi family needs finite x > 0")
    return _ret(_chi_piece(x, order), scalar)


def chi(x):
    """chi(x) = 2/sqrt(pi) (x^{3/2} + x^{1/2}) - 2x(x + 3/2) e^x erfc(sqrt x)."""
    return _chi_eval(x, 0)


def chi_prime(x):
    """First derivative of :func:`chi`."""
    return _chi_eval(x, 1)


def chi_second(x):
    """Second derivative of :func:`chi`."""
    return _chi_eval(x, 2)


_GAMMA_K = -8.0 / 3.0 * SQRT_PI


def _gamma_asym(u, order):
    m, c = _chi_series_coeffs()
    if order == 0:
        coef, power = _GAMMA_K * c * (2.5 - m), 3.0 - m
    else:
        coef, power = _GAMMA_K * c * (2.5 - m) * (3.0 - m), 2.0 - m
    out = np.zeros_like(u)
    for cm, pm in zip(coef[::-1], power[::-1]):
        out += cm * u ** pm
    return out


def _check_u(u):
    u, scalar = _as_array(u)
    if np.any(~(u >= 0)) or np.any(~np.isfinite(u)):
        raise DomainError("gamma needs finite u >= 0")
    return u, scalar


def gamma_fn(u):
    """gamma(u) = -8/3 sqrt(pi) u^{3/2} (chi(u) + u chi'(u)), gamma(0) = 0."""
    u, scalar = _check_u(u)
    out = np.zeros_like(u)
    mid = (u > 0) & (u <= CHI_SWITCH)
    if np.any(mid):
        um = u[mid]
        out[mid] = _GAMMA_K * um ** 1.5 * (_chi_piece(um, 0) + um * _chi_piece(um, 1))
    hi = u > CHI_SWITCH
    if np.any(hi):
        out[hi] = _gamma_asym(u[hi], 0)
    return _ret(out, scalar)


def gamma_prime(u):
    """Derivative of :func:`gamma_fn`, with gamma'(0) = 0."""
    u, scalar = _check_u(u)
    out = np.zeros_like(u)
    mid = (u > 0) & (u <= CHI_SWITCH)
    if np.any(mid):
        um = u[mid]
        c0, c1, c2 = (_chi_piece(um, k) for k in range(3))
        g = _GAMMA_K * um ** 1.5 * (c0 + um * c1)
        out[mid] = 1.5 * g / um + _GAMMA_K * um ** 1.5 * (2.0 * c1 + um * c2)
    hi = u > CHI_SWITCH
    if np.any(hi):
        out[hi] = _gamma_asym(u[hi], 1)
    return _ret(out, scalar)


def gamma_bound_constant(umin=1e-6, umax=1e6, n=4001):
    """Empirical sup of |gamma(u)| / min(1, u^2) over a log grid.

    The ratio tends to 8 as u -> 0 from below, so that limit is included.
    """
    u = np.logspace(math.log10(umin), math.log10(umax), n)
    return max(8.0, float(np.max(np.abs(gamma_fn(u)) / np.minimum(1.0, u * u))))
