"""The spectrally positive stable process of index 3/2.

U has characteristic exponent Psi(u) = c0 |u|^{3/2} (1 + i sgn u), Laplace
exponent psi(l) = sqrt(2/3) l^{3/2}, and Levy measure c1 z^{-5/2} dz on
z > 0.  Its unit-time density is the Airy map distribution

    p1(y) = 6^{-1/3} A(6^{-1/3} y),   A(x) = -2 e^{2x^3/3} (x Ai(x^2) + Ai'(x^2)).

Away from the origin A is evaluated through the moment integrals of
:func:`sbmlab.specfun.airy_moment`, which keeps full relative precision in
the polynomial right tail and allows a log-space left tail.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy import integrate

from . import specfun
from .errors import ConvergenceError, DomainError, InsufficientSampleError

C0 = 1.0 / math.sqrt(3.0)
C1 = math.sqrt(3.0 / (8.0 * math.pi))
ALPHA_INDEX = 1.5
PSI_COEFF = math.sqrt(2.0 / 3.0)
SIX13 = 6.0 ** (1.0 / 3.0)

# |x| below this uses the Maclaurin Airy series directly (x^2 <= 2.5)
_X_SERIES = math.sqrt(specfun.AIRY_SERIES_MAX)
RATIO_TAIL_LEFT = -15.0
RATIO_TAIL_RIGHT = 15.0


@dataclass(frozen=True)
class StableConstants:
    c0: float = C0
    c1: float = C1
    alpha_index: float = ALPHA_INDEX
    psi_coeff: float = PSI_COEFF


@dataclass
class JumpSet:
    """Jumps of U above a cutoff on [0, horizon], sorted by size (decreasing)."""

    sizes: np.ndarray
    times: np.ndarray
    cutoff: float
    horizon: float

    def __len__(self):
        return len(self.sizes)

    def by_time(self):
        order = np.argsort(self.times, kind="stable")
        return self.times[order], self.sizes[order]


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# density


def _airy_map(x):
    """Return (log A, A'/A) of the Airy map density at x (array)."""
    logA = np.empty_like(x)
    ratio = np.empty_like(x)

    mid = np.abs(x) <= _X_SERIES
    if np.any(mid):
        xm = x[mid]
        ai, aip = specfun._airy_maclaurin(xm * xm)
        q = -(xm * ai + aip)  # positive
        logA[mid] = math.log(2.0) + 2.0 * xm ** 3 / 3.0 + np.log(q)
        ratio[mid] = 4.0 * xm * xm - ai / q

    right = x > _X_SERIES
    if np.any(right):
        xr = x[right]
        m2 = specfun.airy_moment(2, xr)
        m4 = specfun.airy_moment(4, xr)
        logA[right] = np.log(m2 / (math.pi * xr))
        ratio[right] = -1.0 / xr - m4 / m2

    left = x < -_X_SERIES
    if np.any(left):
        a = -x[left]
        m0 = specfun.airy_moment(0, a)
        m2 = specfun.airy_moment(2, a)
        q = (2.0 * a * m0 + m2 / (2.0 * a)) / math.pi
        logA[left] = math.log(2.0) - 4.0 / 3.0 * a ** 3 + np.log(q)
        ratio[left] = 4.0 * a * a - (m0 / math.pi) / q
    return logA, ratio


def log_p1(y):
    """log p1(y); finite for every finite y (no underflow in the left tail)."""
    y, scalar = _as_array(y)
    logA, _ = _airy_map(y / SIX13)
    return _ret(logA - math.log(SIX13), scalar)


def p1(y):
    """Density of U_1."""
    return _ret(np.exp(np.asarray(log_p1(y))), np.ndim(y) == 0)


def p1_prime(y):
    """Derivative of :func:`p1`."""
    y, scalar = _as_array(y)
    logA, ratio = _airy_map(y / SIX13)
    return _ret(np.exp(logA - math.log(SIX13)) * ratio / SIX13, scalar)


def _ratio_tail(w):
    """Large-|w| expansion of p1'/p1 through the moment series."""
    x = w / SIX13
    out = np.empty_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        eps = xp ** -3
        q = specfun.moment_series(4, eps) / specfun.moment_series(2, eps)
        out[pos] = -(1.0 + q) / xp
    if np.any(~pos):
        a = -x[~pos]
        eps = a ** -3
        q = specfun.moment_series(2, eps) / specfun.moment_series(0, eps)
        out[~pos] = 4.0 * a * a - 1.0 / (2.0 * a + q / (2.0 * a * a))
    return out / SIX13


def ratio_r(w):
    """r(w) = p1'(w) / p1(w), with tail expansions beyond +-15."""
    w, scalar = _as_array(w)
    out = np.empty_like(w)
    tail = (w >= RATIO_TAIL_RIGHT) | (w <= RATIO_TAIL_LEFT)
    if np.any(tail):
        out[tail] = _ratio_tail(w[tail])
    if np.any(~tail):
        _, ratio = _airy_map(w[~tail] / SIX13)
        out[~tail] = ratio / SIX13
    return _ret(out, scalar)


def ratio_r_closed(w):
    """r(w) from the closed form only (no tail switch); for diagnostics."""
    w, scalar = _as_array(w)
    _, ratio = _airy_map(w / SIX13)
    return _ret(ratio / SIX13, scalar)


def p_t(x, t):
    """Density of U_t: t^{-2/3} p1(x t^{-2/3})."""
    if not t > 0:
        raise DomainError("t must be positive")
    s = t ** (-2.0 / 3.0)
    return s * np.asarray(p1(np.asarray(x, dtype=float) * s)) if np.ndim(x) else s * p1(x * s)


def p_t_prime(x, t):
    """Derivative in x of :func:`p_t`."""
    if not t > 0:
        raise DomainError("t must be positive")
    s = t ** (-2.0 / 3.0)
    return s * s * (np.asarray(p1_prime(np.asarray(x, dtype=float) * s)) if np.ndim(x)
                    else p1_prime(x * s))


# ---------------------------------------------------------------------------
# Fourier oracle


def p1_fourier(y, rel_tol=1e-8, abs_floor=1e-12, order=0):
    """p1(y) (order 0) or p1'(y) (order 1) by Fourier inversion.

    p1(y) = (1/pi) int_0^inf e^{-c0 u^{3/2}} cos(u y + c0 u^{3/2}) du.
    Adaptive Gauss-Kronrod on [0, U*]; for |y| > 10 the range is cut into
    half-periods of cos(u y) and summed.
    """
    if not (1e-12 < rel_tol < 1e-3):
        raise DomainError("rel_tol must lie in (1e-12, 1e-3)")
    y = float(y)
    ustar = (-math.log(rel_tol * 1e-2) / C0) ** (2.0 / 3.0)
    if order == 1:
        ustar *= 1.2

    if order == 0:
        def f(u):
            return math.exp(-C0 * u ** 1.5) * math.cos(u * y + C0 * u ** 1.5)
    else:
        def f(u):
            return -u * math.exp(-C0 * u ** 1.5) * math.sin(u * y + C0 * u ** 1.5)

    if abs(y) <= 10.0:
        edges = np.linspace(0.0, ustar, 5)
    else:
        n = int(math.ceil(ustar * abs(y) / math.pi))
        edges = np.linspace(0.0, ustar, n + 1)
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, b, epsabs=abs_floor * 1e-2, epsrel=rel_tol * 1e-2, limit=200)
        total += val
        err += e
    total /= math.pi
    err /= math.pi
    if err > rel_tol * abs(total) + abs_floor:
        raise ConvergenceError(f"Fourier quadrature at y={y} reached error {err:.3g}",
                               estimate=total, error=err)
    return total


# ---------------------------------------------------------------------------
# distribution function


def _survival_series(y):
    """P(U_1 > y) for large y from the termwise-integrated tail series."""
    x = np.asarray(y, dtype=float) / SIX13
    c = specfun._moment_series_coeffs(2)
    n = np.arange(c.size)
    coef = c / ((1.5 + 3 * n) * 2.0 * math.pi)
    eps = x ** -3
    acc = np.zeros_like(x)
    for cn in coef[::-1]:
        acc = acc * eps + cn
    return x ** -1.5 * acc


def tail_first_moment(y):
    """int_y^inf z p1(z) dz for large y (same series)."""
    x = float(y) / SIX13
    c = specfun._moment_series_coeffs(2)
    n = np.arange(c.size)
    coef = c / ((0.5 + 3 * n) * 2.0 * math.pi)
    return SIX13 * float(np.sum(coef * x ** (-0.5 - 3 * n)))


CDF_LO = -12.0
CDF_HI = 60.0
CDF_STEP = 0.02


@lru_cache(maxsize=None)
def _cdf_table():
    knots = np.arange(CDF_LO, CDF_HI + 0.5 * CDF_STEP, CDF_STEP)
    gx, gw = np.polynomial.legendre.leggauss(10)
    a, b = knots[:-1], knots[1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * gx[None, :]
    mass = (np.asarray(p1(pts.ravel())).reshape(pts.shape) * gw).sum(axis=1) * half
    F = np.concatenate([[0.0], np.cumsum(mass)])
    # pin the right end to the tail series; the left end is < 1e-200
    F_hi = 1.0 - float(_survival_series(CDF_HI))
    F *= F_hi / F[-1]
    return knots, F, np.asarray(p1(knots))


def p1_cdf(y):
    """Distribution function of U_1 (cubic Hermite table + tail series)."""
    y, scalar = _as_array(y)
    knots, F, dens = _cdf_table()
    out = np.empty_like(y)
    lo = y <= CDF_LO
    hi = y >= CDF_HI
    mid = ~(lo | hi)
    out[lo] = 0.0
    if np.any(hi):
        out[hi] = 1.0 - _survival_series(y[hi])
    if np.any(mid):
        ym = y[mid]
        i = np.minimum(((ym - CDF_LO) / CDF_STEP).astype(int), len(knots) - 2)
        h = knots[i + 1] - knots[i]
        s = (ym - knots[i]) / h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        out[mid] = h00 * F[i] + h10 * h * dens[i] + h01 * F[i + 1] + h11 * h * dens[i + 1]
    return _ret(np.clip(out, 0.0, 1.0), scalar)


# ---------------------------------------------------------------------------
# sampling

# Chambers-Mallows-Stuck constants for alpha = 3/2, beta = 1.  Matching
# Psi gives the S1 scale sigma = c0^{2/3}: tan(3 pi / 4) = -1 turns
# sigma^a |u|^a (1 - i beta sgn(u) tan(pi a / 2)) into c0 |u|^a (1 + i sgn u).
_CMS_B = math.atan(math.tan(math.pi * ALPHA_INDEX / 2.0)) / ALPHA_INDEX
_CMS_S = (1.0 + math.tan(math.pi * ALPHA_INDEX / 2.0) ** 2) ** (1.0 / (2.0 * ALPHA_INDEX))
CMS_SCALE = C0 ** (1.0 / ALPHA_INDEX)


def sample_increment(dt, rng, size=None):
    """Draw U_dt (or an array of independent copies)."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    a = ALPHA_INDEX
    v = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size)
    w = rng.standard_exponential(size)
    x = (_CMS_S * np.sin(a * (v + _CMS_B)) / np.cos(v) ** (1.0 / a)
         * (np.cos(v - a * (v + _CMS_B)) / w) ** ((1.0 - a) / a))
    out = CMS_SCALE * dt ** (1.0 / a) * x
    return float(out) if size is None else out


def jump_rate_above(eps):
    """Levy mass of (eps, inf): c1 (2/3) eps^{-3/2}."""
    return C1 * (2.0 / 3.0) * eps ** -1.5


def sample_jumps_above(t, eps, rng):
    """Poisson point process of jumps larger than eps on [0, t]."""
    if not (t > 0 and eps > 0):
        raise DomainError("t and eps must be positive")
    n = rng.poisson(t * jump_rate_above(eps))
    sizes = eps * rng.uniform(size=n) ** (-2.0 / 3.0)
    times = rng.uniform(0.0, t, size=n)
    order = np.argsort(-sizes, kind="stable")
    return JumpSet(sizes=sizes[order], times=times[order], cutoff=eps, horizon=t)


# ---------------------------------------------------------------------------
# conditional jump functionals


def _forward_slope(t, y, delta):
    """(p_t(y) - p_t(y - delta)) / delta, safe for tiny delta."""
    delta = np.asarray(delta, dtype=float)
    small = delta < 1e-5 * t ** (2.0 / 3.0)
    out = np.empty_like(delta)
    if np.any(small):
        out[small] = p_t_prime(y - 0.5 * delta[small], t)
    if np.any(~small):
        d = delta[~small]
        out[~small] = (p_t(y, t) - p_t(y - d, t)) / d
    return out


def _jump_integral(t, y, eps):
    """int_0^eps (p_t(y) - p_t(y - z)) z^{-3/2} dz, with z = s^2."""
    def f(s):
        return 2.0 * float(_forward_slope(t, y, np.array([s * s]))[0])

    if math.isinf(eps):
        pieces = [(0.0, 1.0), (1.0, 4.0), (4.0, 16.0), (16.0, math.inf)]
    else:
        r = math.sqrt(eps)
        pieces = [(0.0, r)]
    total = 0.0
    err = 0.0
    for a, b in pieces:
        val, e = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        total += val
        err += e
    if err > 1e-7 * max(1.0, abs(total)):
        raise ConvergenceError("jump integral did not converge", estimate=total, error=err)
    return total


def truncated_jump_sum_conditional(t, y, eps):
    """E[sum of jumps of size > eps on [0, t] | U_t = y] in closed form."""
    if not (t > 0 and eps > 0):
        raise DomainError("t and eps must be positive")
    integral = _jump_integral(t, y, eps)
    return y + 2.0 * C1 * t * eps ** -0.5 + C1 * t / p_t(y, t) * integral


def jump_identity_residual(t, y):
    """c1 t int_0^inf (p_t(y) - p_t(y-z)) z^{-3/2} dz + y p_t(y); zero in theory."""
    return C1 * t * _jump_integral(t, y, math.inf) + y * p_t(y, t)


@dataclass
class BridgeEstimate:
    mean: float
    ci_lo: float
    ci_hi: float
    n_eff: int
    n_paths: int
    meta: dict = field(default_factory=dict)

    def covers(self, value):
        return self.ci_lo <= value <= self.ci_hi


def _small_jump_gamma_mean(t, h, delta):
    """E sum_{jumps <= delta} Y gamma(3Y/(2h^2)) = t c1 int_0^delta z^{-3/2} gamma dz."""
    def f(s):  # z = s^2
        z = s * s
        return 2.0 * specfun.gamma_fn(1.5 * z / (h * h)) / z if z > 0 else 0.0

    val, _ = integrate.quad(f, 0.0, math.sqrt(delta), epsabs=1e-13, epsrel=1e-10, limit=200)
    return t * C1 * val


def bridge_check(t, y, h_bin, functional, n, rng, delta=0.01, chunk=10_000,
                 n_boot=1000):
    """Kernel-conditioned Monte Carlo of E[functional | U_t = y].

    ``functional`` is ("trunc_sum", eps) or ("gamma_sum", h).  Paths are
    built from explicit jumps above ``delta``, their compensator, and a
    Gaussian stand-in for the compensated small jumps (variance
    2 c1 t delta^{1/2}).  Paths with |U_t - y| <= h_bin are kept.
    """
    from .stats import bootstrap_ci

    kind, par = functional
    if kind == "trunc_sum":
        if par < delta:
            raise DomainError("trunc_sum cutoff must be >= the small-jump cutoff")
    elif kind != "gamma_sum":
        raise DomainError(f"unknown functional {kind!r}")
    if n < 10_000:
        raise DomainError("bridge_check needs n >= 1e4")

    lam = t * jump_rate_above(delta)
    comp = 2.0 * C1 * t * delta ** -0.5
    sd_small = math.sqrt(2.0 * C1 * t * math.sqrt(delta))
    offset = _small_jump_gamma_mean(t, par, delta) if kind == "gamma_sum" else 0.0

    kept = []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        counts = rng.poisson(lam, size=m)
        total = int(counts.sum())
        sizes = delta * rng.uniform(size=total) ** (-2.0 / 3.0)
        owner = np.repeat(np.arange(m), counts)
        u = np.bincount(owner, weights=sizes, minlength=m) - comp
        u += sd_small * rng.standard_normal(m)
        if kind == "trunc_sum":
            vals = np.bincount(owner, weights=np.where(sizes > par, sizes, 0.0), minlength=m)
        else:
            g = sizes * specfun.gamma_fn(1.5 * sizes / (par * par))
            vals = np.bincount(owner, weights=g, minlength=m) + offset
        sel = np.abs(u - y) <= h_bin
        kept.append(vals[sel])
        done += m
    vals = np.concatenate(kept)
    if vals.size < 100:
        raise InsufficientSampleError(f"only {vals.size} paths landed in the conditioning window")
    lo, hi = bootstrap_ci(vals, rng=np.random.default_rng(rng.integers(2 ** 63)), n_resamples=n_boot)
    return BridgeEstimate(mean=float(vals.mean()), ci_lo=lo, ci_hi=hi, n_eff=int(vals.size),
                          n_paths=n, meta={"functional": kind, "parameter": par, "h_bin": h_bin,
                                           "delta": delta})
