"""KS distances, bootstrap intervals, binned conditional means, reports."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .errors import DomainError

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


def _clean(a, name):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise DomainError(f"{name} is empty")
    if np.any(~np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite values")
    return a


def ks_two_sample(a, b, min_size=50):
    """Two-sample Kolmogorov-Smirnov distance sup |F_A - F_B|."""
    a = np.sort(_clean(a, "A"))
    b = np.sort(_clean(b, "B"))
    if a.size < min_size or b.size < min_size:
        raise DomainError(f"KS needs at least {min_size} points per sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_vs_cdf(a, cdf, min_size=50):
    """One-sample KS distance between the sample and a distribution function."""
    a = np.sort(_clean(a, "A"))
    if a.size < min_size:
        raise DomainError(f"KS needs at least {min_size} points")
    n = a.size
    f = np.asarray(cdf(a), dtype=float)
    hi = np.arange(1, n + 1) / n - f
    lo = f - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))


def ks_band(n_a, n_b=None, c=1.36):
    """Asymptotic 95% null band of the KS statistic."""
    if n_b is None:
        return c / math.sqrt(n_a)
    return c * math.sqrt((n_a + n_b) / (n_a * n_b))


def ecdf(a):
    """Sorted support and right-continuous ECDF values."""
    a = np.sort(_clean(a, "A"))
    return a, np.arange(1, a.size + 1) / a.size


def bootstrap_ci(values, rng=None, n_resamples=1000, level=0.95, stat=np.mean, seed=0):
    """Percentile bootstrap interval for ``stat``."""
    values = _clean(values, "values")
    if rng is None:
        rng = np.random.default_rng(seed)
    n = values.size
    reps = np.empty(n_resamples)
    for i in range(n_resamples):
        reps[i] = stat(values[rng.integers(0, n, n)])
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class BinStat:
    lo: tuple
    hi: tuple
    count: int
    mean: float
    ci_lo: float
    ci_hi: float
    flagged: bool


def binned_conditional_mean(keys, values, bin_edges, min_count=30, n_resamples=1000, seed=0):
    """Mean of ``values`` in each cell of a 2-D grid over ``keys``.

    ``bin_edges`` is a pair (edges along key 0, edges along key 1).  Cells
    with fewer than ``min_count`` points are returned flagged.
    """
    keys = np.asarray(keys, dtype=float)
    values = np.asarray(values, dtype=float)
    e0, e1 = (np.asarray(e, dtype=float) for e in bin_edges)
    i0 = np.searchsorted(e0, keys[:, 0], side="right") - 1
    i1 = np.searchsorted(e1, keys[:, 1], side="right") - 1
    out = []
    rng = np.random.default_rng(seed)
    for a in range(len(e0) - 1):
        for b in range(len(e1) - 1):
            sel = (i0 == a) & (i1 == b)
            c = int(sel.sum())
            if c == 0:
                continue
            v = values[sel]
            if c < min_count:
                out.append(BinStat((e0[a], e1[b]), (e0[a + 1], e1[b + 1]), c, float(v.mean()),
                                   math.nan, math.nan, True))
                continue
            lo, hi = bootstrap_ci(v, rng=rng, n_resamples=n_resamples)
            out.append(BinStat((e0[a], e1[b]), (e0[a + 1], e1[b + 1]), c, float(v.mean()),
                               lo, hi, False))
    return out


def quantile_table(a, b, levels=QUANTILE_LEVELS):
    qa = np.quantile(a, levels)
    qb = np.quantile(b, levels)
    return [(float(p), float(x), float(y)) for p, x, y in zip(levels, qa, qb)]


@dataclass
class CIEntry:
    name: str
    lo: float
    hi: float
    target: float
    hit: bool


@dataclass
class ComparisonReport:
    id: str
    n_A: int
    n_B: int
    ks: float
    ks_threshold: float
    quantiles: list = field(default_factory=list)
    cis: list = field(default_factory=list)
    master_seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def pass_(self):
        return bool(self.ks <= self.ks_threshold and all(c.hit for c in self.cis))

    def to_dict(self):
        d = {
            "id": self.id,
            "n_A": self.n_A,
            "n_B": self.n_B,
            "ks": self.ks,
            "ks_threshold": self.ks_threshold,
            "quantiles": [{"p": p, "qA": x, "qB": y} for p, x, y in self.quantiles],
            "cis": [asdict(c) for c in self.cis],
            "pass": self.pass_,
            "master_seed": self.master_seed,
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d):
        rep = cls(
            id=d["id"], n_A=int(d["n_A"]), n_B=int(d["n_B"]), ks=float(d["ks"]),
            ks_threshold=float(d["ks_threshold"]),
            quantiles=[(q["p"], q["qA"], q["qB"]) for q in d.get("quantiles", [])],
            cis=[CIEntry(**c) for c in d.get("cis", [])],
            master_seed=int(d.get("master_seed", 0)),
            extra=d.get("extra", {}),
        )
        if "pass" in d and bool(d["pass"]) != rep.pass_:
            raise DomainError("report pass flag inconsistent with its contents")
        return rep

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
