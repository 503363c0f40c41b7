"""Branching Brownian particles as an independent oracle for the local time.

N particles of mass m = alpha/N start at 0.  Each lives an exponential time
with rate rho = 4/m, diffuses as a standard Brownian motion, and at death
leaves 0 or 2 children with probability 1/2 each.  Occupation (mass x time)
is tallied on a fine band grid; bands are aggregated to the estimator
bandwidth afterwards.

Lifetimes are drawn exactly and each lifetime is cut into Brownian
sub-steps of length <= dt.  The genealogy is walked depth first, so memory
is the stack of pending siblings rather than the whole population.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numba
import numpy as np

from .errors import DomainError, InsufficientSampleError, ResourceError
from .rng import stream

BRANCH_CALIBRATION = 4.0  # rho * particle_mass

_OK, _CAPPED, _HORIZON = 0, 1, 2


@numba.njit(cache=True)
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n))
    b[: a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _bbm_kernel(alpha, n0, dt, horizon, max_lifetimes, grid_lo, grid_w, n_bands, snap_times,
                rng):
    m = alpha / n0
    rho = BRANCH_CALIBRATION / m
    occ = np.zeros(n_bands)
    pos = np.zeros(max(1024, 2 * n0))
    born = np.zeros(pos.shape[0])
    top = n0
    snap_idx = np.empty(256, dtype=np.int64)
    snap_pos = np.empty(256)
    n_snap = 0
    last_death = 0.0
    n_life = 0
    status = _OK
    while top > 0:
        top -= 1
        x = pos[top]
        b0 = born[top]
        tau = rng.exponential(1.0 / rho)
        death = b0 + tau
        end = death if death < horizon else horizon
        span = end - b0
        # without a band grid only snapshot positions matter, and the bridge is exact
        k = int(math.ceil(span / dt)) if n_bands > 0 else 1
        if k < 1:
            k = 1
        h = span / k
        sh = math.sqrt(h)
        t = b0
        for j in range(k):
            xn = x + sh * rng.standard_normal()
            c = 0.5 * (x + xn)
            i = int(math.floor((c - grid_lo) / grid_w))
            if i >= 0 and i < n_bands:
                occ[i] += m * h
            for s in range(snap_times.shape[0]):
                ts = snap_times[s]
                if ts >= t and ts < t + h:
                    u = ts - t
                    mu = x + (u / h) * (xn - x)
                    sd = math.sqrt(u * (h - u) / h)
                    if n_snap == snap_pos.shape[0]:
                        snap_pos = _grow(snap_pos, n_snap + 1)
                        tmp = np.empty(snap_pos.shape[0], dtype=np.int64)
                        tmp[:n_snap] = snap_idx[:n_snap]
                        snap_idx = tmp
                    snap_idx[n_snap] = s
                    snap_pos[n_snap] = mu + sd * rng.standard_normal()
                    n_snap += 1
            x = xn
            t += h
        n_life += 1
        if death >= horizon:
            status = _HORIZON
            last_death = horizon
            continue
        if death > last_death:
            last_death = death
        if rng.random() < 0.5:
            if top + 2 > pos.shape[0]:
                pos = _grow(pos, top + 2)
                born = _grow(born, top + 2)
            pos[top] = x
            born[top] = death
            pos[top + 1] = x
            born[top + 1] = death
            top += 2
        if n_life >= max_lifetimes and top > 0:
            return occ, last_death, n_life, _CAPPED, snap_idx[:n_snap], snap_pos[:n_snap]
    return occ, last_death, n_life, status, snap_idx[:n_snap], snap_pos[:n_snap]


# ---------------------------------------------------------------------------
# records


@dataclass
class ParticleCloud:
    positions: np.ndarray
    particle_mass: float
    branch_rate: float
    time: float

    @property
    def alive(self):
        return int(self.positions.size)

    @property
    def total_mass(self):
        return self.alive * self.particle_mass

    def mass_in(self, lo, hi):
        return float(np.count_nonzero((self.positions >= lo) & (self.positions < hi))
                     * self.particle_mass)


@dataclass
class OccupationRecord:
    band_centers: np.ndarray
    bandwidth: float
    occupation: np.ndarray
    horizon: float
    meta: dict = field(default_factory=dict)

    @property
    def edges(self):
        return np.concatenate([self.band_centers - 0.5 * self.bandwidth,
                               [self.band_centers[-1] + 0.5 * self.bandwidth]])

    @property
    def density(self):
        """Histogram local-time estimate L_hat on each band."""
        return self.occupation / self.bandwidth

    def coarsen(self, factor, offset=0):
        """Merge ``factor`` consecutive bands, starting at band ``offset``."""
        factor = int(factor)
        n = (self.occupation.size - offset) // factor
        occ = self.occupation[offset: offset + n * factor].reshape(n, factor).sum(axis=1)
        cen = self.band_centers[offset: offset + n * factor].reshape(n, factor).mean(axis=1)
        meta = dict(self.meta, coarsened=factor)
        return OccupationRecord(cen, self.bandwidth * factor, occ, self.horizon, meta)


@dataclass
class ParticleRun:
    record: OccupationRecord
    extinction_time: float  # inf when the horizon was reached
    clouds: dict
    n_lifetimes: int
    retries: int = 0


def simulate_particles(alpha, N, dt, window, w, rng, horizon=math.inf, snap_times=(),
                       max_lifetimes=None, fine=2, max_retries=20, seed_fn=None):
    """Run one replicate to extinction (or to ``horizon``).

    Occupation is tallied on bands of width w/fine aligned with 0; with
    ``window=None`` nothing is tallied and lifetimes are not sub-stepped.  A
    replicate whose genealogy exceeds ``max_lifetimes`` is discarded and
    rerun on a fresh stream from ``seed_fn(k)``; the count is returned.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if N < 1:
        raise DomainError("N must be >= 1")
    if not (0 < dt <= 1e-3):
        raise DomainError("dt must lie in (0, 1e-3]")
    if w < 2.0 * math.sqrt(dt) - 1e-12:
        raise DomainError("bandwidth must be at least 2 sqrt(dt)")
    wf = w / fine
    if window is None:
        grid_lo, n_bands = 0.0, 0
    else:
        lo, hi = window
        grid_lo = math.floor(lo / wf) * wf
        n_bands = int(math.ceil((hi - grid_lo) / wf - 1e-9))
    if max_lifetimes is None:
        max_lifetimes = default_lifetime_cap(alpha, N)
    snaps = np.asarray(sorted(snap_times), dtype=float)
    retries = 0
    gen = rng
    while True:
        occ, ext, n_life, status, sidx, spos = _bbm_kernel(
            float(alpha), int(N), float(dt), float(horizon), int(max_lifetimes), grid_lo, wf,
            n_bands, snaps, gen)
        if status != _CAPPED:
            break
        retries += 1
        if retries > max_retries or seed_fn is None:
            raise ResourceError(f"particle genealogy exceeded {max_lifetimes} lifetimes")
        gen = seed_fn(retries)
    centers = grid_lo + wf * (np.arange(n_bands) + 0.5)
    m = alpha / N
    clouds = {float(s): ParticleCloud(np.sort(spos[sidx == i]), m, BRANCH_CALIBRATION / m, float(s))
              for i, s in enumerate(snaps)}
    rec = OccupationRecord(centers, wf, occ, horizon,
                           {"alpha": alpha, "N": N, "dt": dt, "fine": fine})
    return ParticleRun(rec, math.inf if status == _HORIZON else float(ext), clouds, int(n_life),
                       retries)


def default_lifetime_cap(alpha, N, y_cap=2000.0):
    """Lifetimes needed for total occupation y_cap (mean lifetime mass is alpha^2/(4N^2))."""
    return int(y_cap * BRANCH_CALIBRATION * N * N / (alpha * alpha))


# ---------------------------------------------------------------------------
# estimators


def _band_value(rec, a, w):
    """Histogram L_hat on the interval of width w centred at a (fine-band aligned)."""
    wf = rec.bandwidth
    k = int(round(w / wf))
    lo = a - 0.5 * w
    i0 = int(round((lo - (rec.band_centers[0] - 0.5 * wf)) / wf))
    if i0 < 0 or i0 + k > rec.occupation.size:
        raise DomainError(f"level {a} too close to the window edge")
    return rec.occupation[i0: i0 + k].sum() / (k * wf)


def local_time_samples(rec, a, w=None):
    """(L_hat, Ldot_hat) at level a: band value and central difference over 2w."""
    if w is None:
        w = rec.bandwidth * rec.meta.get("fine", 1)
    edges = rec.edges
    if a - 2.5 * w < edges[0] - 1e-12 or a + 2.5 * w > edges[-1] + 1e-12:
        raise DomainError(f"level {a} outside the banded window (2-band margin)")
    L = _band_value(rec, a, w)
    Ld = (_band_value(rec, a + w, w) - _band_value(rec, a - w, w)) / (2.0 * w)
    return float(L), float(Ld)


def one_sided_slopes(rec, a=0.0, w=None):
    """Second-order one-sided derivative estimates of L at a from band averages.

    Right: (-2 A0 + 3 A1 - A2)/w on [a, a+w), [a+w, a+2w), [a+2w, a+3w);
    left is the mirror image.
    """
    if w is None:
        w = rec.bandwidth * rec.meta.get("fine", 1)
    A = [_band_value(rec, a + (k + 0.5) * w, w) for k in range(3)]
    B = [_band_value(rec, a - (k + 0.5) * w, w) for k in range(3)]
    right = (-2.0 * A[0] + 3.0 * A[1] - A[2]) / w
    left = (2.0 * B[0] - 3.0 * B[1] + B[2]) / w
    return float(left), float(right)


def derivative_jump(rec, w=None):
    """Ldot(0+) - Ldot(0-) from one-sided stencils."""
    left, right = one_sided_slopes(rec, 0.0, w)
    return right - left


def support_is_interval(rec, threshold=0.0, max_gap=1):
    """True when {a: L_hat > threshold} is an interval up to gaps of max_gap bands.

    Gaps are counted in estimator bands (width w), i.e. ``fine`` tally bands each.
    """
    idx = np.flatnonzero(rec.density > threshold)
    if idx.size < 2:
        return True
    allowed = max_gap * int(rec.meta.get("fine", 1))
    return bool(np.all(np.diff(idx) <= allowed + 1))


# ---------------------------------------------------------------------------
# replicate fan-out


@dataclass
class ParticleBatch:
    alpha: float
    N: int
    dt: float
    w: float
    records: list
    extinction_times: np.ndarray
    clouds: list
    retries: int
    master_seed: int

    def samples(self, a, w=None):
        out = np.array([local_time_samples(r, a, w) for r in self.records])
        return out[:, 0], out[:, 1]


def _one_replicate(args):
    (alpha, N, dt, window, w, horizon, snaps, cap, seed, tag, i) = args
    run = simulate_particles(alpha, N, dt, window, w, stream(seed, tag, i, 0), horizon=horizon,
                             snap_times=snaps, max_lifetimes=cap,
                             seed_fn=lambda k: stream(seed, tag, i, k))
    return run


def run_replicates(alpha, N, dt, window, w, n, master_seed, horizon=math.inf, snap_times=(),
                   max_lifetimes=None, tag="particles", workers=1):
    """n independent replicates; replicate i uses streams derived from (seed, tag, i)."""
    jobs = [(alpha, N, dt, window, w, horizon, tuple(snap_times), max_lifetimes, master_seed, tag,
             i) for i in range(n)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_one_replicate, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        runs = [_one_replicate(j) for j in jobs]
    return ParticleBatch(alpha, N, dt, w, [r.record for r in runs],
                         np.array([r.extinction_time for r in runs]),
                         [r.clouds for r in runs], int(sum(r.retries for r in runs)), master_seed)


# ---------------------------------------------------------------------------
# closed-form targets for the calibration checks


def extinction_survival(alpha, t):
    """P(extinction time > t) = 1 - exp(-alpha/(2t))."""
    return 1.0 - math.exp(-alpha / (2.0 * t))


def mass_variance(alpha, t):
    return 4.0 * alpha * t


def first_moment_interval(alpha, t, lo, hi):
    """alpha P(B_t in [lo, hi])."""
    from scipy.special import ndtr
    s = math.sqrt(t)
    return alpha * float(ndtr(hi / s) - ndtr(lo / s))


def second_moment_interval(alpha, s, lo, hi):
    """E[X_s([lo,hi])^2] = (alpha P_s 1_I)^2 + 4 alpha int_0^s int p_r(x) (P_{s-r} 1_I)(x)^2 dx dr."""
    from scipy import integrate
    from scipy.special import ndtr

    def P(u, x):
        su = math.sqrt(u)
        return ndtr((hi - x) / su) - ndtr((lo - x) / su)

    m1 = alpha * P(s, 0.0)

    def inner(r):
        if r <= 0:
            return 0.0
        sr = math.sqrt(r)
        u = s - r
        f = lambda x: math.exp(-0.5 * x * x / r) / (sr * math.sqrt(2 * math.pi)) * (
            P(u, x) ** 2 if u > 0 else float(lo <= x < hi))
        pts = [lo, hi] if u < 1e-3 else None
        return integrate.quad(f, -12 * sr - 12, 12 * sr + 12, points=pts, limit=400,
                              epsabs=1e-12)[0]

    cov = integrate.quad(inner, 0.0, s, limit=200, epsabs=1e-11)[0]
    return m1 * m1 + 4.0 * alpha * cov


@dataclass
class CalibrationCheck:
    name: str
    estimate: float
    lo: float
    hi: float
    target: float

    @property
    def hit(self):
        return bool(self.lo <= self.target <= self.hi)


def calibration_checks(batch, alpha, ts=(0.5, 1.0, 2.0), var_t=1.0, moment_tx=(1.0, 1.0),
                       n_boot=1000, seed=0):
    """Extinction law, mass variance, first moment against closed forms (3 sigma / 10% bands)."""
    from .stats import bootstrap_ci
    n = batch.extinction_times.size
    out = []
    for t in ts:
        p = float(np.mean(batch.extinction_times > t))
        q = extinction_survival(alpha, t)
        s = math.sqrt(q * (1 - q) / n)
        out.append(CalibrationCheck(f"survival_t{t:g}", p, p - 3 * s, p + 3 * s, q))
    mass = np.array([c[var_t].total_mass for c in batch.clouds])
    v = float(np.var(mass, ddof=1))
    target = mass_variance(alpha, var_t)
    out.append(CalibrationCheck(f"mass_variance_t{var_t:g}", v, v / 1.1, v / 0.9, target))
    t, x = moment_tx
    mx = np.array([c[t].mass_in(0.0, x) for c in batch.clouds])
    mu = float(mx.mean())
    s = float(mx.std(ddof=1) / math.sqrt(n))
    out.append(CalibrationCheck(f"first_moment_t{t:g}_x{x:g}", mu, mu - 3 * s, mu + 3 * s,
                                first_moment_interval(alpha, t, 0.0, x)))
    return out


def jump_check(batch, alpha, w=None, n_boot=1000, seed=0):
    """Mean of Ldot(0+) - Ldot(0-) with a bootstrap CI, target -2 alpha."""
    from .stats import bootstrap_ci
    j = np.array([derivative_jump(r, w) for r in batch.records])
    lo, hi = bootstrap_ci(j, n_resamples=n_boot, seed=seed)
    return CalibrationCheck("ldot_jump_at_0", float(j.mean()), lo, hi, -2.0 * alpha)


def require_power(L_start, min_alive=200, level=0.1):
    k = int(np.count_nonzero(L_start > level))
    if k < min_alive:
        raise InsufficientSampleError(f"only {k} replicates with L_hat > {level} (need {min_alive})")
    return k


# ---------------------------------------------------------------------------
# the headline comparison

DRIFT_L_EDGES = np.arange(0.1, 2.11, 0.2)
DRIFT_LD_EDGES = np.arange(-5.0, 5.01, 1.0)


def transition_comparison(a0, delta, n, sde_cfg=None, master_seed=0, alpha=1.0, N=64, dt=5e-4,
                          w=0.05, h=0.05, ks_threshold=0.06, batch=None, n_boot=1000):
    """Particle law of (L, Ldot) at a0+delta against the SDE started from the particle state at a0.

    Returns a ComparisonReport; ``ks`` is the larger of the two marginal
    distances.  The CI entry checks the densest (L, Ldot) bin: the mean of
    (Ldot(a0+h) - Ldot(a0))/h against the bin mean of g(L, Ldot/2).
    """
    from . import sdeengine
    from .drift import g
    from .stats import CIEntry, ComparisonReport, binned_conditional_mean, ks_two_sample, quantile_table

    if not (a0 > 0 and delta >= 0):
        raise DomainError("need a0 > 0 and delta >= 0")
    cfg = {"dx": 1e-4, "eps_stop": sdeengine.EPS_STOP}
    cfg.update(sde_cfg or {})
    if batch is None:
        hi = a0 + max(delta, h) + 3 * w
        batch = run_replicates(alpha, N, dt, (-hi, hi), w, n, master_seed, tag="transition")
    L0, D0 = batch.samples(a0)
    require_power(L0)
    L1p, D1p = batch.samples(a0 + delta)
    L1s = np.zeros(n)
    D1s = np.zeros(n)
    for i in range(n):
        if L0[i] <= cfg["eps_stop"]:
            continue
        if delta == 0:
            L1s[i], D1s[i] = L0[i], D0[i]
            continue
        path = sdeengine.simulate_main_sde(L0[i], D0[i], delta, cfg["dx"],
                                           stream(master_seed, "transition-sde", i),
                                           eps_stop=cfg["eps_stop"])
        a, b = path.value_at(delta)
        L1s[i], D1s[i] = float(a), float(b)
    ks_L = ks_two_sample(L1p, L1s)
    ks_D = ks_two_sample(D1p, D1s)

    _, Dh = batch.samples(a0 + h)
    keys = np.column_stack([L0, D0])
    vals = (Dh - D0) / h
    bins = binned_conditional_mean(keys, vals, (DRIFT_L_EDGES, DRIFT_LD_EDGES),
                                   n_resamples=n_boot, seed=master_seed)
    ok = [s for s in bins if not s.flagged]
    cis = []
    extra = {"ks_L": ks_L, "ks_Ldot": ks_D, "retries": batch.retries, "N": N, "dt": dt, "w": w,
             "h": h, "alpha": alpha, "a0": a0, "delta": delta, "sde": cfg,
             "quantiles_Ldot": [{"p": p, "qA": x, "qB": y} for p, x, y in quantile_table(D1p, D1s)]}
    if ok:
        best = max(ok, key=lambda s: s.count)
        sel = ((L0 >= best.lo[0]) & (L0 < best.hi[0]) & (D0 >= best.lo[1]) & (D0 < best.hi[1]))
        target = float(np.mean(g(L0[sel], 0.5 * D0[sel])))
        cis.append(CIEntry("conditional_drift", best.ci_lo, best.ci_hi, target,
                           bool(best.ci_lo <= target <= best.ci_hi)))
        extra["drift_bin"] = {"L": [best.lo[0], best.hi[0]], "Ldot": [best.lo[1], best.hi[1]],
                              "count": best.count, "mean": best.mean}
    return ComparisonReport(id="transition", n_A=n, n_B=n, ks=max(ks_L, ks_D),
                            ks_threshold=ks_threshold, quantiles=quantile_table(L1p, L1s),
                            cis=cis, master_seed=master_seed, extra=extra)
