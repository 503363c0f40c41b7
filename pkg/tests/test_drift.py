import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from sbmlab import drift
from sbmlab.errors import DomainError, OutOfRangeError
from sbmlab.stabledist import log_p1, ratio_r
from sbmlab.stats import ks_band, ks_vs_cdf

R0 = -0.75488724832538617225


def test_g_examples():
    assert drift.g(0.0, 3.7) == 0.0
    assert drift.g(1.0, 0.0) == pytest.approx(8 * R0, rel=1e-10)
    for t in (0.5, 2.0):
        y = 40 * t ** (2 / 3)
        assert y * drift.g(t, y) / t == pytest.approx(-20.0, rel=0.02)


def test_g_rejects_negative_time():
    with pytest.raises(DomainError):
        drift.g(-0.1, 0.0)


@given(st.floats(min_value=-50, max_value=50))
def test_g_vanishes_at_zero_time(y):
    assert drift.g(0.0, y) == 0.0


@given(st.floats(min_value=1e-3, max_value=10.0), st.floats(min_value=-5.0, max_value=30.0),
       st.sampled_from([0.5, 2.0]))
def test_g_scaling(t, y, lam):
    assert drift.g(lam ** 3 * t, lam ** 2 * y) == pytest.approx(lam * drift.g(t, y), rel=1e-10, abs=1e-12)


def test_negative_part_bound():
    y0, c_hat = drift.ratio_bound()
    assert ratio_r(y0) == pytest.approx(0.0, abs=1e-10)
    rng = np.random.default_rng(5)
    t = rng.uniform(0, 10, 10_000)
    t[t == 0] = 1e-12
    y = rng.uniform(-50, 50, 10_000)
    gv = drift.g(t, y)
    neg = gv < 0
    assert neg.sum() > 1000
    assert np.all(-gv[neg] <= 8 * c_hat * np.cbrt(t[neg]) * (1 + 1e-12))


@given(st.floats(min_value=-30.0, max_value=30.0), st.floats(min_value=0.01, max_value=20.0))
def test_b_matches_g_construction(z, t):
    y = 0.5 * z * t ** (2 / 3)
    gl = drift.g(t, y)
    assert gl == pytest.approx(8 * t ** (1 / 3) * ratio_r(z / 2), rel=1e-10, abs=1e-12)
    assert drift.b(z) == pytest.approx(gl * t ** (-1 / 3) - 2 / 3 * z * z, rel=1e-9, abs=1e-9)


def test_b_examples():
    assert drift.b(0.0) == pytest.approx(8 * R0, rel=1e-10)
    assert abs(drift.b(60.0) + 2 / 3 * 3600) <= 1
    assert abs(drift.b(-60.0) - 2 / 3 * 3600) <= 1


def test_g_h_normalization():
    assert drift.gh_normalization() == pytest.approx(8.0, abs=1e-4)


def test_g_h_converges():
    e1 = abs(drift.g_h(1.0, 0.0, 0.1) / 0.1 - drift.g(1.0, 0.0))
    e2 = abs(drift.g_h(1.0, 0.0, 0.01) / 0.01 - drift.g(1.0, 0.0))
    assert e1 / e2 >= 5


@pytest.mark.parametrize("y", [-1.0, 1.0])
def test_g_h_sign(y):
    v = drift.g_h(1.0, y, 0.05) / 0.05
    assert math.isfinite(v) and np.sign(v) == np.sign(drift.g(1.0, y))


def test_g_h_domain():
    with pytest.raises(DomainError):
        drift.g_h(0.0, 0.0, 0.1)


def test_invariant_normalized():
    law = drift.invariant_law()
    total = sum(integrate.quad(law.pdf, a, c, epsabs=1e-13, limit=200)[0]
                for a, c in [(-40, -3), (-3, 0), (0, 3), (3, 25)])
    assert total == pytest.approx(1.0, abs=1e-6)
    assert law.F[0] == 0.0 and law.F[-1] == pytest.approx(1.0, abs=1e-8)
    dF = np.diff(law.F)
    assert np.all(dF >= 0) and np.all(law.density >= 0)
    # strict where the density is representable
    live = (law.density[:-1] > 1e-12) & (law.density[1:] > 1e-12)
    assert np.all(dF[live] > 0)


def test_invariant_log_constant():
    z = np.array([-3.0, 0.0, 3.0])
    c = drift.invariant_law().log_pdf(z) + z ** 3 / 36 - 2 * np.asarray(log_p1(z / 2))
    assert np.ptp(c) < 1e-8


def test_invariant_right_tail():
    # log nu(z) = -z^3/36 - 5 log z + const + o(1)
    lp = drift.invariant_law().log_pdf
    d = lp(20.0) - lp(40.0)
    pred = (40 ** 3 - 20 ** 3) / 36 + 5 * math.log(2)
    assert d == pytest.approx(pred, rel=0.1)


@given(st.floats(min_value=0.001, max_value=0.999))
def test_quantile_roundtrip(p):
    assert drift.invariant_cdf(drift.invariant_quantile(p)) == pytest.approx(p, abs=1e-6)


def test_quantile_domain():
    for p in (0.0, 1.0, -0.5):
        with pytest.raises(DomainError):
            drift.invariant_quantile(p)


def test_inverse_cdf_sampling():
    u = np.random.default_rng(9).uniform(size=10_000)
    x = drift.invariant_quantile(u)
    assert ks_vs_cdf(x, drift.invariant_cdf) <= ks_band(10_000)


def test_invariant_mean_negative():
    assert drift.invariant_mean() < 0


def test_scale_function():
    assert drift.scale_function(0.0) == 0.0
    s = drift.scale_function(np.linspace(-5, 5, 41))
    assert np.all(np.diff(s) > 0)


def test_scale_speed_relation():
    x = np.array([-2.0, 0.0, 2.0])
    v = drift.scale_derivative(x) * drift.invariant_density(x)
    assert np.ptp(v) / v.mean() < 1e-6


def test_scale_overflow():
    with pytest.raises(OutOfRangeError) as e:
        drift.scale_derivative(60.0)
    assert e.value.last_value > 1e300


def test_ratio_table_accuracy():
    tab = drift.ratio_table()
    assert tab.max_error < 1e-7
    assert tab.coef.shape[0] == 4
