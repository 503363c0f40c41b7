import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbmlab import specfun
from sbmlab.errors import DomainError, OutOfRangeError

# mpmath, 40 digits
AIRY = [
    (-8.0, -0.052705050356386202622, 0.93556093819830655103),
    (-5.0, 0.35076100902411431979, 0.32719281855444313679),
    (-2.0, 0.22740742820168557599, 0.61825902074169104141),
    (0.0, 0.35502805388781723926, -0.25881940379280679841),
    (1.0, 0.13529241631288141552, -0.15914744129679321279),
    (2.5, 0.015725923380470489995, -0.026250881035903230365),
    (3.0, 0.0065911393574607191443, -0.011912976705951318474),
    (5.0, 0.00010834442813607441735, -0.000247413890868462476),
    (10.0, 1.1047532552898685934e-10, -3.5206336767389236366e-10),
    (30.0, 3.2082175915504955711e-49, -1.7598765814327259821e-48),
]

# chi, chi', chi'' from the erfc closed form at 40 digits
CHI = [
    (0.1, 0.16096220524077268708, 0.19856927703075952999, -4.4422615212424861636),
    (1.0, 0.11884045341199012574, -0.053296661939877470396, 0.038895460502173920144),
    (2.0, 0.080451330568415155319, -0.027312172728444084619, 0.016141865694704366301),
    (5.0, 0.037585997650730459604, -0.0073404767656301481106, 0.0024495549000113657676),
    (30.0, 0.004417601349637827075, -0.00019997319139449948479, 0.000015119766592129195842),
    (60.0, 0.0016812558090209805943, -0.000039887281156912435806, 1.578212307718228115e-6),
    (100.0, 0.00080606686920672751753, -0.000011708626268266443989, 2.8353029503280017768e-7),
    (1000.0, 0.000026628750746211627778, -3.9810709278161683178e-8, 9.9197111143571833366e-11),
]

GAMMA = [
    (0.001, -7.1543653664606652664e-6),
    (0.5, -0.19168335559547787534),
    (1.0, -0.30979558826051785937),
    (10.0, 0.43664729650964785296),
    (100.0, 1.7242230543664451156),
    (1000.0, 1.9702603143067145462),
]


@pytest.mark.parametrize("x, ai, aip", AIRY)
def test_airy_matches_reference(x, ai, aip):
    assert specfun.airy_ai(x) == pytest.approx(ai, rel=1e-10, abs=1e-300)
    assert specfun.airy_aip(x) == pytest.approx(aip, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("x, ai, aip", [r for r in AIRY if r[0] > 0])
def test_scaled_airy_consistent(x, ai, aip):
    z = 2.0 / 3.0 * x ** 1.5
    assert specfun.airy_ai_scaled(x) == pytest.approx(ai * math.exp(z), rel=1e-10)
    assert specfun.airy_aip_scaled(x) == pytest.approx(aip * math.exp(z), rel=1e-10)


def test_airy_ode_residual():
    h = 1e-3
    x = np.linspace(-5.0, 8.0, 131)
    f = lambda s: np.asarray(specfun.airy_ai(s))
    d2 = (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)
    assert np.max(np.abs(d2 - x * f(x))) < 1e-7


def test_airy_below_range():
    with pytest.raises(OutOfRangeError):
        specfun.airy_ai(-9.0)


SWITCHES = [
    (specfun.airy_ai_scaled, specfun.AIRY_SERIES_MAX),
    (specfun.airy_aip_scaled, specfun.AIRY_SERIES_MAX),
    (specfun.airy_ai_scaled, specfun.MOMENT_ASYM_MIN ** 2),
    (specfun.airy_aip_scaled, specfun.MOMENT_ASYM_MIN ** 2),
    (lambda s: specfun.airy_moment(0, s), specfun.MOMENT_ASYM_MIN),
    (lambda s: specfun.airy_moment(2, s), specfun.MOMENT_ASYM_MIN),
    (lambda s: specfun.airy_moment(4, s), specfun.MOMENT_ASYM_MIN),
    (specfun.chi, specfun.CHI_CLOSED_MAX),
    (specfun.chi_prime, specfun.CHI_CLOSED_MAX),
    (specfun.chi_second, specfun.CHI_CLOSED_MAX),
    (specfun.chi, specfun.CHI_SWITCH),
    (specfun.chi_prime, specfun.CHI_SWITCH),
    (specfun.chi_second, specfun.CHI_SWITCH),
]


@pytest.mark.parametrize("f, x", SWITCHES)
def test_branch_continuity(f, x):
    lo, hi = f(x * (1 - 1e-13)), f(x * (1 + 1e-13))
    assert abs(hi - lo) <= 1e-9 * abs(lo)


def test_branch_metadata():
    switch_points = set()
    for branches in specfun.BRANCHES.values():
        for br in branches:
            assert br.kind in {"series", "quadrature", "asymptotic"}
            assert br.switch_point > 0 and br.terms_used >= 1
            switch_points.add(br.switch_point)
    assert {x for _, x in SWITCHES} <= switch_points | {specfun.MOMENT_ASYM_MIN}


def test_erfc_against_defining_integral():
    from scipy import integrate
    for x in (0.0, 0.5, 2.0, 5.0):
        ref = 2 / math.sqrt(math.pi) * integrate.quad(lambda t: math.exp(-t * t), x, math.inf)[0]
        assert specfun.erfc(x) == pytest.approx(ref, rel=1e-10)
    assert specfun.erfcx(30.0) == pytest.approx(1 / (30 * math.sqrt(math.pi)) * (1 - 1 / 1800), rel=1e-6)


@pytest.mark.parametrize("x, c0, c1, c2", CHI)
def test_chi_family_matches_reference(x, c0, c1, c2):
    assert specfun.chi(x) == pytest.approx(c0, rel=1e-11)
    assert specfun.chi_prime(x) == pytest.approx(c1, rel=1e-10)
    assert specfun.chi_second(x) == pytest.approx(c2, rel=1e-9)


def test_chi_leading_tail():
    x = 1e4
    assert x ** 1.5 * specfun.chi(x) == pytest.approx(3 / (2 * math.sqrt(math.pi)), rel=2e-3)


@pytest.mark.parametrize("x", [0.5, 1.0, 5.0])
def test_chi_prime_finite_difference(x):
    h = 1e-4
    fd = (specfun.chi(x + h) - specfun.chi(x - h)) / (2 * h)
    assert abs(fd - specfun.chi_prime(x)) < 1e-6


@pytest.mark.parametrize("u, ref", GAMMA)
def test_gamma_matches_reference(u, ref):
    assert specfun.gamma_fn(u) == pytest.approx(ref, rel=1e-10)


def test_gamma_at_zero_and_domain():
    assert specfun.gamma_fn(0.0) == 0.0
    assert specfun.gamma_prime(0.0) == 0.0
    with pytest.raises(DomainError):
        specfun.gamma_fn(-1.0)
    with pytest.raises(DomainError):
        specfun.chi(-0.5)


def test_gamma_small_u_expansion():
    # -8u^2 + 16 sqrt(pi) u^{5/2} + o(u^{5/2})
    for u in (1e-3, 1e-4):
        two_term = -8 * u * u + 16 * math.sqrt(math.pi) * u ** 2.5
        assert abs(specfun.gamma_fn(u) - two_term) / u ** 2 < 60 * u


def test_gamma_large_u_expansion():
    # 2 - 30/u + 262.5/u^2 + O(u^-3)
    for u in (100.0, 400.0):
        assert abs(specfun.gamma_fn(u) - (2 - 30 / u + 262.5 / u ** 2)) < 2500 / u ** 3


@given(st.floats(min_value=1e-3, max_value=500.0))
def test_gamma_prime_is_derivative(u):
    h = 1e-5 * max(u, 1e-2)
    fd = (specfun.gamma_fn(u + h) - specfun.gamma_fn(u - h)) / (2 * h)
    assert fd == pytest.approx(specfun.gamma_prime(u), rel=1e-5, abs=1e-9)


@given(st.floats(min_value=0.0, max_value=1e6))
def test_gamma_bounded_by_c_min_one_u2(u):
    c = specfun.gamma_bound_constant()
    assert abs(specfun.gamma_fn(u)) <= c * min(1.0, u * u) * (1 + 1e-9) + 1e-300


def test_gamma_switch_continuity():
    x = specfun.CHI_SWITCH
    for f in (specfun.gamma_fn, specfun.gamma_prime):
        a, b = f(x * (1 - 1e-12)), f(x * (1 + 1e-12))
        assert abs(a - b) <= 1e-9 * abs(a)


def test_integrability_stable_under_refinement():
    from scipy import integrate
    f = lambda x: abs(specfun.gamma_prime(x)) * max(1.0, 1.0 / x) if x > 0 else 0.0
    coarse = sum(integrate.quad(f, a, b, limit=100)[0] for a, b in [(0, 1), (1, 10), (10, 1e3), (1e3, 1e6)])
    fine = sum(integrate.quad(f, a, b, limit=400)[0]
               for a, b in [(0, .5), (.5, 1), (1, 3), (3, 10), (10, 100), (100, 1e3), (1e3, 1e4), (1e4, 1e6)])
    assert math.isfinite(coarse) and coarse == pytest.approx(fine, rel=1e-6)


@given(st.lists(st.floats(min_value=0.0, max_value=1e4), min_size=1, max_size=8))
def test_vectorized_matches_scalar(us):
    v = specfun.gamma_fn(np.array(us))
    assert np.allclose(v, [specfun.gamma_fn(u) for u in us], rtol=0, atol=0)
