"""Drift fields of the local-time SDE and of its reduced diffusion.

    g(t, y)  = 8 t p_t'(y) / p_t(y) = 8 t^{1/3} r(y t^{-2/3}),   g(0, y) = 0
    b(z)     = 8 r(z/2) - (2/3) z^2
    nu(dz)   = C p1(z/2)^2 exp(-z^3/36) dz
    s(x)     = int_0^x exp(-int_0^y b(z)/8 dz) dy

where r = p1'/p1.  :class:`RatioTable` packs r into a spline table that the
compiled SDE kernels evaluate.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, interpolate, optimize

from . import specfun
from .errors import ConvergenceError, DomainError, OutOfRangeError
from .stabledist import C1, log_p1, p_t, p_t_prime, ratio_r


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


def g(t, y):
    """Drift of the derivative process, g(t, y) = 8 t^{1/3} r(y t^{-2/3})."""
    t, ts = _as_array(t)
    y, ys = _as_array(y)
    if np.any(t < 0):
        raise DomainError("g needs t >= 0")
    t, y = np.broadcast_arrays(t, y)
    out = np.zeros(t.shape)
    pos = t > 0
    if np.any(pos):
        tp = t[pos]
        out[pos] = 8.0 * np.cbrt(tp) * ratio_r(y[pos] * tp ** (-2.0 / 3.0))
    return _ret(out, ts and ys)


def b(z):
    """Drift of the reduced diffusion."""
    z, scalar = _as_array(z)
    return _ret(8.0 * ratio_r(0.5 * z) - 2.0 / 3.0 * z * z, scalar)


def g_h(t, y, h, tol=1e-10):
    """Pre-limit drift g_h(t, y); g_h / h -> g as h -> 0.

    g_h = (1/h) (c1 t / p_t(y)) int_0^inf (p_t(y) - p_t(y - h^2 z)) (2 - gamma(3z/2)) z^{-3/2} dz.
    """
    if not (t > 0 and h > 0):
        raise DomainError("g_h needs t > 0 and h > 0")
    py = p_t(y, t)
    h2 = h * h
    small = 1e-5 * t ** (2.0 / 3.0)

    def f(s):  # z = s^2, dz z^{-3/2} = 2 ds / s^2
        z = s * s
        d = h2 * z
        if d < small:
            slope = h2 * p_t_prime(y - 0.5 * d, t)
        else:
            slope = (py - p_t(y - d, t)) / z
        return 2.0 * slope * (2.0 - specfun.gamma_fn(1.5 * z))

    edges = [0.0, 0.5, 2.0, 6.0, 20.0, math.inf]
    total = 0.0
    err = 0.0
    for a, c in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, c, epsabs=tol * 1e-2, epsrel=tol, limit=400)
        total += val
        err += e
    if err > 1e-6 * max(1.0, abs(total)):
        raise ConvergenceError("g_h quadrature did not converge", estimate=total, error=err)
    return C1 * t / (h * py) * total


def gh_normalization():
    """c1 int_0^inf (2 - gamma(3z/2)) z^{-1/2} dz (equals 8)."""
    def f(s):  # z = s^2
        return 2.0 * (2.0 - specfun.gamma_fn(1.5 * s * s))

    total = 0.0
    for a, c in [(0.0, 1.0), (1.0, 4.0), (4.0, 20.0), (20.0, math.inf)]:
        total += integrate.quad(f, a, c, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    return C1 * total


# ---------------------------------------------------------------------------
# ratio bound


@lru_cache(maxsize=None)
def ratio_bound():
    """Mode y0 of p1 and the certified sup of |r| on [y0, inf).

    r is positive left of the mode and negative right of it, with
    r ~ -5/(2y) at +inf; the sup is found on a dense grid then refined.
    """
    y0 = optimize.brentq(lambda y: ratio_r(y), -3.0, 3.0, xtol=1e-14)
    grid = np.linspace(y0, 60.0, 60_001)
    vals = np.abs(ratio_r(grid))
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda y: -abs(ratio_r(y)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    c_hat = max(float(vals[i]), -float(res.fun))
    # beyond the grid |r| <= 2.5/y * (1 + small) < |r| on the grid
    return float(y0), c_hat


# ---------------------------------------------------------------------------
# invariant law of the reduced diffusion

NU_LO = -40.0
NU_HI = 25.0


def log_nu_unnormalized(z):
    z = np.asarray(z, dtype=float)
    return 2.0 * np.asarray(log_p1(0.5 * z)) - z ** 3 / 36.0


@dataclass
class InvariantLaw:
    normalizer: float
    z: np.ndarray
    F: np.ndarray
    density: np.ndarray

    def pdf(self, z):
        z, scalar = _as_array(z)
        return _ret(self.normalizer * np.exp(log_nu_unnormalized(z)), scalar)

    def log_pdf(self, z):
        z, scalar = _as_array(z)
        return _ret(math.log(self.normalizer) + log_nu_unnormalized(z), scalar)

    def cdf(self, z):
        z, scalar = _as_array(z)
        out = self._cdf_interp(np.clip(z, self.z[0], self.z[-1]))
        return _ret(np.clip(out, 0.0, 1.0), scalar)

    def quantile(self, p):
        p, scalar = _as_array(p)
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("quantile needs p in (0, 1)")
        z = self._q_interp(p)
        for _ in range(3):  # Newton polish against the table cdf
            d = np.maximum(self.pdf(z), 1e-300)
            z = z - (self.cdf(z) - p) / d
        return _ret(z, scalar)

    def __post_init__(self):
        self._cdf_interp = interpolate.CubicHermiteSpline(self.z, self.F, self.density)
        keep = np.concatenate([[True], np.diff(self.F) > 1e-15])
        self._q_interp = interpolate.PchipInterpolator(self.F[keep], self.z[keep])


def _nu_integrand(z):
    return float(np.exp(log_nu_unnormalized(z)))


@lru_cache(maxsize=None)
def invariant_law(n_table=4001):
    """Build (and cache) the invariant law: normalizer and cdf table."""
    edges = [NU_LO, -12.0, -6.0, -3.0, 0.0, 3.0, 6.0, 12.0, NU_HI]
    mass = 0.0
    for a, c in zip(edges[:-1], edges[1:]):
        mass += integrate.quad(_nu_integrand, a, c, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    C = 1.0 / mass
    # table knots spaced evenly in a mass-adapted coordinate: dense where nu is large
    fine = np.linspace(NU_LO, NU_HI, 200_001)
    dens = C * np.exp(log_nu_unnormalized(fine))
    weight = np.sqrt(dens) + 1e-3
    u = integrate.cumulative_trapezoid(weight, fine, initial=0.0)
    knots = np.interp(np.linspace(0, u[-1], n_table), u, fine)
    knots[0], knots[-1] = NU_LO, NU_HI
    gx, gw = np.polynomial.legendre.leggauss(12)
    a, c = knots[:-1], knots[1:]
    half = 0.5 * (c - a)
    pts = (0.5 * (a + c))[:, None] + half[:, None] * gx[None, :]
    seg = (C * np.exp(log_nu_unnormalized(pts.ravel())).reshape(pts.shape) * gw).sum(axis=1) * half
    F = np.concatenate([[0.0], np.cumsum(seg)])
    return InvariantLaw(normalizer=C, z=knots, F=F, density=C * np.exp(log_nu_unnormalized(knots)))


def invariant_density(z):
    return invariant_law().pdf(z)


def invariant_cdf(z):
    return invariant_law().cdf(z)


def invariant_quantile(p):
    return invariant_law().quantile(p)


def invariant_mean():
    """E_nu[Z], negative: the mean log-decay rate of the companion process."""
    law = invariant_law()
    edges = [NU_LO, -6.0, 0.0, 6.0, NU_HI]
    return sum(integrate.quad(lambda z: z * law.pdf(z), a, c, epsabs=1e-13, limit=200)[0]
               for a, c in zip(edges[:-1], edges[1:]))


# ---------------------------------------------------------------------------
# scale function

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def drift_integral(y):
    """B(y) = int_0^y b(z) dz by composite Gauss-Legendre on unit panels."""
    y, scalar = _as_array(y)
    out = np.empty_like(y)
    for idx, yy in np.ndenumerate(y):
        n = max(1, int(math.ceil(abs(yy))))
        edges = np.linspace(0.0, yy, n + 1)
        a, c = edges[:-1], edges[1:]
        half = 0.5 * (c - a)
        pts = (0.5 * (a + c))[:, None] + half[:, None] * _GL_X[None, :]
        out[idx] = float(((np.asarray(b(pts.ravel())).reshape(pts.shape) * _GL_W).sum(axis=1)
                          * half).sum())
    return _ret(out, scalar)


_LOG_MAX = math.log(np.finfo(float).max) - 1.0


def scale_derivative(x):
    """s'(x) = exp(-B(x)/8); range error when it overflows."""
    x, scalar = _as_array(x)
    e = -np.asarray(drift_integral(x)) / 8.0
    if np.any(e > _LOG_MAX):
        raise OutOfRangeError("scale derivative overflows", last_value=float(np.exp(_LOG_MAX)))
    return _ret(np.exp(e), scalar)


def scale_function(x):
    """s(x) = int_0^x s'(y) dy."""
    x, scalar = _as_array(x)
    out = np.empty_like(x)
    for idx, xx in np.ndenumerate(x):
        if xx == 0.0:
            out[idx] = 0.0
            continue
        val, _ = integrate.quad(lambda t: float(scale_derivative(t)), 0.0, xx, epsrel=1e-10,
                                limit=200)
        out[idx] = val
    return _ret(out, scalar)


# ---------------------------------------------------------------------------
# table for compiled kernels

TABLE_HALF_WIDTH = 16.0
TABLE_STEP = 1.0 / 128.0


@dataclass
class RatioTable:
    """Piecewise-cubic table of r on [-W, W] plus tail-series coefficients.

    ``coef[k, i]`` are the cubic coefficients on cell i (highest power
    first), as produced by scipy's CubicSpline.
    """

    lo: float
    step: float
    coef: np.ndarray
    s0: np.ndarray
    s2: np.ndarray
    s4: np.ndarray
    max_error: float


@lru_cache(maxsize=None)
def ratio_table():
    knots = np.arange(-TABLE_HALF_WIDTH, TABLE_HALF_WIDTH + 0.5 * TABLE_STEP, TABLE_STEP)
    vals = np.asarray(ratio_r(knots))
    spl = interpolate.CubicSpline(knots, vals)
    mids = knots[:-1] + 0.5 * TABLE_STEP
    err = float(np.max(np.abs(spl(mids) - ratio_r(mids)) / (1.0 + np.abs(ratio_r(mids)))))
    return RatioTable(lo=float(knots[0]), step=TABLE_STEP, coef=np.ascontiguousarray(spl.c),
                      s0=specfun._moment_series_coeffs(0)[:8].copy(),
                      s2=specfun._moment_series_coeffs(2)[:8].copy(),
                      s4=specfun._moment_series_coeffs(4)[:8].copy(),
                      max_error=err)
