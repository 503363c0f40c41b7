"""Time stepping for the local-time SDE and the reduced diffusion.

Main system (space variable x plays the role of time):

    dLdot = 4 sqrt(L) dB + g(L, Ldot/2) dx,     dL = Ldot dx,

absorbed at 0.  Reduced diffusion, with Z = Ldot L^{-2/3} after the time
change dt = L^{-1/3} dx:

    dZ = 4 dW + b(Z) dt,     Lambda_t = Lambda_0 exp(int_0^t Z).

Both schemes are tamed Euler steps; the hot loops are compiled with numba
and draw normals from an explicit numpy Generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numba
import numpy as np

from .drift import ratio_table
from .errors import (DomainError, HorizonTooShortError, InsufficientResolutionError,
                     NumericalBlowupError)

SIX13 = 6.0 ** (1.0 / 3.0)
EPS_STOP = 1e-6
TAIL_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _poly(c, e):
    acc = 0.0
    for k in range(len(c) - 1, -1, -1):
        acc = acc * e + c[k]
    return acc


@numba.njit(cache=True)
def _ratio_tail(w, s0, s2, s4):
    x = w / SIX13
    if x > 0.0:
        e = x ** -3
        q = _poly(s4, e) / _poly(s2, e)
        return -(1.0 + q) / x / SIX13
    a = -x
    e = a ** -3
    q = _poly(s2, e) / _poly(s0, e)
    return (4.0 * a * a - 1.0 / (2.0 * a + q / (2.0 * a * a))) / SIX13


@numba.njit(inline="always")
def _ratio(w, lo, step, coef, s0, s2, s4):
    if w > lo and w < -lo:
        i = int((w - lo) / step)
        if i >= coef.shape[1]:
            i = coef.shape[1] - 1
        d = w - (lo + i * step)
        return ((coef[0, i] * d + coef[1, i]) * d + coef[2, i]) * d + coef[3, i]
    return _ratio_tail(w, s0, s2, s4)


@numba.njit(inline="always")
def _b(z, lo, step, coef, s0, s2, s4):
    return 8.0 * _ratio(0.5 * z, lo, step, coef, s0, s2, s4) - (2.0 / 3.0) * z * z


@numba.njit(inline="always")
def _g(L, y, lo, step, coef, s0, s2, s4):
    if L <= 0.0:
        return 0.0
    c = L ** (1.0 / 3.0)
    return 8.0 * c * _ratio(y / (c * c), lo, step, coef, s0, s2, s4)


@numba.njit(cache=True)
def _z_path_kernel(z0, loglam0, dt, max_steps, sigma, stop_on_convergence, check_every, tail_tol,
                   rng, lo, step, coef, s0, s2, s4):
    Z = np.empty(max_steps + 1)
    LL = np.empty(max_steps + 1)
    Icum = np.empty(max_steps + 1)
    Z[0] = z0
    LL[0] = loglam0
    Icum[0] = 0.0
    sq = math.sqrt(dt)
    n = max_steps
    status = 0
    for k in range(max_steps):
        z = Z[k]
        bz = _b(z, lo, step, coef, s0, s2, s4)
        zn = z + bz * dt / (1.0 + dt * abs(bz)) + sigma * sq * rng.standard_normal()
        if not math.isfinite(zn):
            n = k
            status = 1
            break
        Z[k + 1] = zn
        LL[k + 1] = LL[k] + 0.5 * dt * (z + zn)
        Icum[k + 1] = Icum[k] + 0.5 * dt * (math.exp(LL[k] / 3.0) + math.exp(LL[k + 1] / 3.0))
        if stop_on_convergence and (k + 1) % check_every == 0:
            j = int(0.9 * (k + 1))
            if Icum[k + 1] - Icum[j] < tail_tol * Icum[k + 1]:
                n = k + 1
                status = 2
                break
    return Z[: n + 1], LL[: n + 1], Icum[: n + 1], status


@numba.njit(cache=True)
def _z_chain_kernel(z0, n_samples, thin, burn, dt, rng, lo, step, coef, s0, s2, s4):
    out = np.empty(n_samples)
    z = z0
    sq = 4.0 * math.sqrt(dt)
    for k in range(burn):
        bz = _b(z, lo, step, coef, s0, s2, s4)
        z = z + bz * dt / (1.0 + dt * abs(bz)) + sq * rng.standard_normal()
    for i in range(n_samples):
        for k in range(thin):
            bz = _b(z, lo, step, coef, s0, s2, s4)
            z = z + bz * dt / (1.0 + dt * abs(bz)) + sq * rng.standard_normal()
        out[i] = z
    return out


@numba.njit(cache=True)
def _z_hit_kernel(z0, level, max_steps, dt, rng, lo, step, coef, s0, s2, s4):
    z = z0
    sq = 4.0 * math.sqrt(dt)
    above = z0 > level
    for k in range(max_steps):
        bz = _b(z, lo, step, coef, s0, s2, s4)
        z = z + bz * dt / (1.0 + dt * abs(bz)) + sq * rng.standard_normal()
        if (z <= level) == above:
            return k + 1
    return -1


@numba.njit(cache=True)
def _main_kernel(L0, Ld0, dx, max_steps, eps_stop, rng, lo, step, coef, s0, s2, s4):
    L = np.zeros(max_steps + 1)
    Ld = np.zeros(max_steps + 1)
    L[0] = L0
    Ld[0] = Ld0
    sq = math.sqrt(dx)
    n_neg = 0
    absorbed = -1
    n = max_steps
    status = 0
    if L0 <= eps_stop:
        L[0] = 0.0
        Ld[0] = 0.0
        return L[:1], Ld[:1], 0, 0, 0
    for k in range(max_steps):
        l = L[k]
        ld = Ld[k]
        gk = _g(l, 0.5 * ld, lo, step, coef, s0, s2, s4)
        ldn = ld + gk * dx / (1.0 + dx * abs(gk)) + 4.0 * math.sqrt(l) * sq * rng.standard_normal()
        ln = l + 0.5 * dx * (ld + ldn)
        if not (math.isfinite(ldn) and math.isfinite(ln)):
            n = k
            status = 1
            break
        if ln < 0.0:
            n_neg += 1
        if ln <= eps_stop:
            L[k + 1] = 0.0
            Ld[k + 1] = 0.0
            absorbed = k + 1
            n = k + 1
            break
        L[k + 1] = ln
        Ld[k + 1] = ldn
    return L[: n + 1], Ld[: n + 1], absorbed, n_neg, status


def _tab():
    t = ratio_table()
    # tail coefficients travel as tuples: plain values, no array refcounting in the kernels
    return (t.lo, t.step, t.coef, tuple(map(float, t.s0)), tuple(map(float, t.s2)),
            tuple(map(float, t.s4)))


def ratio_fast(w):
    """The compiled table evaluation of r, vectorized (for tests)."""
    tab = _tab()
    return np.array([_ratio(float(v), *tab) for v in np.ravel(w)]).reshape(np.shape(w))


# ---------------------------------------------------------------------------
# path containers


@dataclass
class ZDiffusionPath:
    t_grid: np.ndarray
    Z: np.ndarray
    log_lambda: np.ndarray
    seed: object = None
    meta: dict = field(default_factory=dict)

    @property
    def Lambda(self):
        return np.exp(self.log_lambda)


@dataclass
class LocalTimePath:
    x_grid: np.ndarray
    L: np.ndarray
    Ldot: np.ndarray
    R_hat: float
    scheme_meta: dict = field(default_factory=dict)
    tail: np.ndarray | None = None  # R_hat - x, accurate near extinction

    def value_at(self, x):
        """(L, Ldot) at x by linear interpolation; zero at and beyond R_hat."""
        x = np.asarray(x, dtype=float)
        L = np.interp(x, self.x_grid, self.L, right=0.0)
        Ld = np.interp(x, self.x_grid, self.Ldot, right=0.0)
        beyond = x >= self.R_hat
        return np.where(beyond, 0.0, L), np.where(beyond, 0.0, Ld)

    def hit_point(self, eps):
        """First grid x where L <= eps (inf if never)."""
        idx = np.flatnonzero(self.L <= eps)
        return float(self.x_grid[idx[0]]) if idx.size else math.inf

    @property
    def truncation_bound(self):
        """max |L_{i+1} - L_i - Ldot_i dx| over the grid before absorption."""
        if self.x_grid.size < 2:
            return 0.0
        dx = np.diff(self.x_grid)
        res = np.abs(np.diff(self.L) - self.Ldot[:-1] * dx)
        live = self.L[1:] > 0
        return float(res[live].max()) if np.any(live) else 0.0


# ---------------------------------------------------------------------------
# simulation entry points


def simulate_z(z0, lambda0, t_max, dt, rng, sigma=4.0, stop_on_convergence=True):
    """Tamed Euler path of the reduced diffusion and its companion Lambda.

    Stops early once the integral of Lambda^{1/3} has converged (tail over
    the last 10% of steps below 1e-6 of the total), unless
    ``stop_on_convergence`` is False.
    """
    if not (0 < dt <= 0.1):
        raise DomainError("dt must lie in (0, 0.1]")
    if not t_max >= dt:
        raise DomainError("t_max must be >= dt")
    if not lambda0 > 0:
        raise DomainError("lambda0 must be positive")
    max_steps = int(round(t_max / dt))
    check_every = max(1, min(1000, max_steps // 20))
    Z, LL, _, status = _z_path_kernel(float(z0), math.log(lambda0), float(dt), max_steps,
                                      float(sigma), bool(stop_on_convergence), check_every,
                                      TAIL_REL_TOL, rng, *_tab())
    if status == 1:
        raise NumericalBlowupError("reduced diffusion produced a non-finite state",
                                   step=int(Z.size))
    t = dt * np.arange(Z.size)
    return ZDiffusionPath(t_grid=t, Z=Z, log_lambda=LL,
                          meta={"scheme": "tamed-euler-z", "dt": dt, "converged": status == 2})


def z_chain_samples(n_samples, thin, burn, dt, rng, z0=0.0):
    """Thinned samples of one long reduced-diffusion chain (no companion)."""
    return _z_chain_kernel(float(z0), int(n_samples), int(thin), int(burn), float(dt), rng, *_tab())


def z_hitting_time(z0, level, t_max, dt, rng):
    """First grid time at which the reduced diffusion crosses ``level`` (inf if not by t_max)."""
    k = _z_hit_kernel(float(z0), float(level), int(round(t_max / dt)), float(dt), rng, *_tab())
    return math.inf if k < 0 else k * dt


def reconstruct_local_time(zpath, check_horizon=True):
    """Undo the time change: x(t) = int_0^t Lambda^{1/3}, L = Lambda, Ldot = Z Lambda^{2/3}."""
    t = zpath.t_grid
    LL = zpath.log_lambda
    lam13 = np.exp(LL / 3.0)
    inc = 0.5 * np.diff(t) * (lam13[:-1] + lam13[1:])
    x = np.concatenate([[0.0], np.cumsum(inc)])
    total = float(x[-1])
    # tail integral summed from the far end keeps R - x accurate near extinction
    tail = np.concatenate([np.cumsum(inc[::-1])[::-1], [0.0]])
    if check_horizon:
        j = int(0.9 * (x.size - 1))
        tail_mass = float(x[-1] - x[j])
        if not tail_mass < TAIL_REL_TOL * total:
            raise HorizonTooShortError(
                f"Lambda^(1/3) integral not converged: last-10% increment {tail_mass:.3g}",
                tail_mass=tail_mass)
    L = np.exp(LL)
    Ld = zpath.Z * np.exp(2.0 * LL / 3.0)
    meta = dict(zpath.meta)
    meta.update({"scheme": "reconstruct", "seed": zpath.seed})
    return LocalTimePath(x_grid=x, L=L, Ldot=Ld, R_hat=total, scheme_meta=meta, tail=tail)


def simulate_main_sde(t0, ydot0, x_max, dx, rng, eps_stop=EPS_STOP):
    """Tamed Euler-Maruyama path of (L, Ldot) started at (t0, ydot0)."""
    if not t0 > 0:
        raise DomainError("t0 must be positive")
    if not (0 < dx <= 1e-2):
        raise DomainError("dx must lie in (0, 1e-2]")
    max_steps = int(math.ceil(x_max / dx))
    L, Ld, absorbed, n_neg, status = _main_kernel(float(t0), float(ydot0), float(dx), max_steps,
                                                  float(eps_stop), rng, *_tab())
    if status == 1:
        raise NumericalBlowupError("local-time scheme produced a non-finite state",
                                   step=int(L.size))
    x = dx * np.arange(L.size)
    R = float(x[absorbed]) if absorbed >= 0 else math.inf
    steps = max(L.size - 1, 1)
    meta = {"scheme": "tamed-euler-main", "dx": dx, "eps_stop": eps_stop,
            "neg_fraction": n_neg / steps, "x_max": x_max}
    return LocalTimePath(x_grid=x, L=L, Ldot=Ld, R_hat=R, scheme_meta=meta)


def path_to_z(path):
    """Forward transform of a main-SDE path (pre-absorption part).

    Z = Ldot L^{-2/3}, t(x) = int_0^x L^{-1/3} (trapezoid).
    """
    live = path.L > 0
    x = path.x_grid[live]
    L = path.L[live]
    Ld = path.Ldot[live]
    w = L ** (-1.0 / 3.0)
    t = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(x) * (w[:-1] + w[1:]))])
    return ZDiffusionPath(t_grid=t, Z=Ld * L ** (-2.0 / 3.0), log_lambda=np.log(L),
                          meta={"scheme": "transform", "source": path.scheme_meta})


# ---------------------------------------------------------------------------
# diagnostics


def realized_qv(path, x_bar, refine=1):
    """Sum of squared Ldot increments over grid points x <= x_bar (every ``refine``-th)."""
    if refine < 1:
        raise DomainError("refine must be >= 1")
    sel = path.x_grid <= x_bar
    ld = path.Ldot[sel][::refine]
    if ld.size < 2:
        return 0.0
    return float(np.sum(np.diff(ld) ** 2))


def occupation_integral(path, x_bar):
    """int_0^{x_bar} L dx by the trapezoid rule on the path grid."""
    sel = path.x_grid <= x_bar
    x = path.x_grid[sel]
    L = path.L[sel]
    if x.size < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(x) * (L[:-1] + L[1:])))


def extinction_exponent(path, lo=1e-5, hi=1e-2, min_points=10):
    """Least-squares slope of log L against log(R_hat - x) where lo <= L <= hi."""
    if not math.isfinite(path.R_hat):
        raise DomainError("path is not absorbed")
    gap = path.tail if path.tail is not None else path.R_hat - path.x_grid
    sel = (path.L >= lo) & (path.L <= hi) & (gap > 0)
    if sel.sum() < min_points:
        raise InsufficientResolutionError(f"only {int(sel.sum())} points in the window")
    slope, _ = np.polyfit(np.log(gap[sel]), np.log(path.L[sel]), 1)
    return float(slope)
