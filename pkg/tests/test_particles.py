import math

import numpy as np
import pytest

from sbmlab import particles as pt
from sbmlab.errors import DomainError, InsufficientSampleError, ResourceError
from sbmlab.rng import stream
from sbmlab.stats import ks_two_sample


def _run(seed=1, **kw):
    args = dict(alpha=1.0, N=64, dt=5e-4, window=(-1.0, 1.0), w=0.05, rng=stream(seed, "t-part"))
    args.update(kw)
    return pt.simulate_particles(**args)


def test_record_invariants():
    run = _run(snap_times=(0.1,))
    rec = run.record
    assert np.all(rec.occupation >= 0)
    assert rec.bandwidth == pytest.approx(0.025)
    assert np.allclose(np.diff(rec.band_centers), rec.bandwidth)
    # bands aligned with 0
    assert np.min(np.abs(rec.edges)) < 1e-12
    cloud = run.clouds[0.1]
    assert cloud.branch_rate * cloud.particle_mass == pytest.approx(4.0)
    assert cloud.total_mass == pytest.approx(cloud.alive / 64)
    assert cloud.mass_in(-np.inf, np.inf) == pytest.approx(cloud.total_mass)


def test_coarsen_preserves_mass():
    rec = _run().record
    c = rec.coarsen(2)
    assert c.bandwidth == pytest.approx(0.05)
    assert c.occupation.sum() == pytest.approx(rec.occupation[: 2 * c.occupation.size].sum())


def test_determinism():
    a, b = _run(seed=3), _run(seed=3)
    assert np.array_equal(a.record.occupation, b.record.occupation)
    assert a.extinction_time == b.extinction_time


def test_occupation_mass_over_horizon():
    # E int_0^T X_t(R) dt = alpha T
    tot = np.array([_run(seed=4, window=(-8.0, 8.0), horizon=1.0,
                         rng=stream(4, "occ", i)).record.occupation.sum() for i in range(1000)])
    assert abs(tot.mean() - 1.0) <= 3 * tot.std(ddof=1) / math.sqrt(tot.size)


@pytest.mark.parametrize("kw", [dict(dt=2e-3), dict(w=0.01), dict(alpha=0.0), dict(N=0)])
def test_domain_errors(kw):
    with pytest.raises(DomainError):
        _run(**kw)


def test_lifetime_cap():
    with pytest.raises(ResourceError):
        _run(alpha=3.0, max_lifetimes=5)
    run = _run(alpha=3.0, max_lifetimes=5000, seed_fn=lambda k: stream(9, "cap", k), max_retries=200)
    assert run.n_lifetimes <= 5000
    assert pt.default_lifetime_cap(1.0, 64) == 2000 * 4 * 64 * 64


def test_estimator_domain():
    rec = _run().record
    with pytest.raises(DomainError):
        pt.local_time_samples(rec, 0.95)


def test_closed_forms():
    assert pt.extinction_survival(1.0, 0.5) == pytest.approx(1 - math.exp(-1))
    assert pt.mass_variance(1.0, 1.0) == 4.0
    assert pt.first_moment_interval(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.3413447460685429)
    # the second moment of the whole line is alpha^2 + 4 alpha s
    assert pt.second_moment_interval(1.0, 1.0, -40.0, 40.0) == pytest.approx(5.0, rel=1e-6)


def test_require_power():
    with pytest.raises(InsufficientSampleError):
        pt.require_power(np.zeros(500))
    assert pt.require_power(np.ones(300)) == 300


# ---------------------------------------------------------------------------
# checks on the shared batches


def test_symmetry(transition_batch):
    Lp, _ = transition_batch.samples(0.5)
    Lm, _ = transition_batch.samples(-0.5)
    assert ks_two_sample(Lp, Lm) <= 0.05


def test_bandwidth_consistency(transition_batch):
    L1, _ = transition_batch.samples(0.5)
    L2, _ = transition_batch.samples(0.5, w=0.025)
    assert ks_two_sample(L1, L2) <= 0.05


def test_support_is_interval(transition_batch):
    assert all(pt.support_is_interval(r) for r in transition_batch.records)


def test_criticality(calibration):
    _, batch = calibration
    mass = np.array([c[1.0].total_mass for c in batch.clouds])
    assert abs(mass.mean() - 1.0) <= 3 * mass.std(ddof=1) / math.sqrt(mass.size)


def test_second_moment(calibration):
    _, batch = calibration
    x = np.array([c[1.0].mass_in(1.0, 1.5) for c in batch.clouds])
    target = pt.second_moment_interval(1.0, 1.0, 1.0, 1.5)
    x2 = x * x
    assert abs(x2.mean() - target) <= 3 * x2.std(ddof=1) / math.sqrt(x2.size)


def test_zero_delta_comparison(transition_batch):
    rep = pt.transition_comparison(0.3, 0.0, 2000, batch=transition_batch,
                                   master_seed=transition_batch.master_seed, n_boot=200)
    assert rep.ks == 0.0


def test_support_gap_unit():
    rec = pt.OccupationRecord(np.arange(8) * 0.025, 0.025, np.array([1, 1, 0, 0, 1, 0, 0, 0.0]),
                              np.inf, {"fine": 2})
    assert pt.support_is_interval(rec)
    rec.occupation[4] = 0
    rec.occupation[5] = 1
    assert not pt.support_is_interval(rec)
