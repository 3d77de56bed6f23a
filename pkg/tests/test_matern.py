import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maternlab.matern import (M1, M2, M3, Variant, convert, correlation, effective_range_solve,
                              inverse_range, jacobian, make_params, matern_eval, param_names,
                              partial_sill)

VARIANTS = ("m1", "m2", "m3")


def mp_m1(s2, beta, nu, h):
    # independent high-precision evaluation of the m1 form
    if h == 0:
        return s2
    x = mpmath.mpf(h) / beta
    return float(s2 / (2 ** (nu - 1) * mpmath.gamma(nu)) * x ** nu * mpmath.besselk(nu, x))


def mp_m2(phi, alpha, nu, h):
    if h == 0:
        return float(mpmath.sqrt(mpmath.pi) * phi * mpmath.gamma(nu)
                     / (mpmath.gamma(nu + 0.5) * mpmath.mpf(alpha) ** (2 * nu)))
    x = mpmath.mpf(alpha) * h
    return float(mpmath.sqrt(mpmath.pi) * phi / (2 ** (nu - 1) * mpmath.gamma(nu + 0.5)
                                                 * mpmath.mpf(alpha) ** (2 * nu))
                 * x ** nu * mpmath.besselk(nu, x))


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.7, 3.2])
@pytest.mark.parametrize("h", [0.0, 1e-4, 0.05, 0.3, 1.2])
def test_eval_against_mpmath(nu, h):
    assert matern_eval(M1(1.3, 0.12, nu), h) == pytest.approx(mp_m1(1.3, 0.12, nu, h), rel=1e-13)
    assert matern_eval(M2(2.0, 7.0, nu), h) == pytest.approx(mp_m2(2.0, 7.0, nu, h), rel=1e-13)
    rho = 0.25
    beta = rho / (2 * math.sqrt(nu))
    assert matern_eval(M3(0.8, rho, nu), h) == pytest.approx(mp_m1(0.8, beta, nu, h), rel=1e-13)


def test_exponential_special_case():
    h = np.linspace(0, 2, 50)
    assert np.allclose(matern_eval(M1(2.0, 0.3, 0.5), h), 2.0 * np.exp(-h / 0.3), rtol=1e-14)


def test_nugget_only_at_zero_lag():
    p = M1(1.0, 0.1, 1.0, 0.25)
    h = np.array([0.0, 1e-15, 1e-13, 0.1])
    c = matern_eval(p, h)
    assert c[0] == pytest.approx(1.25) and c[1] == pytest.approx(1.25)
    assert c[2] < 1.0 + 1e-9 and c[3] < 1.0


def test_validation():
    for bad in [(0.0, 1.0, 0.5), (1.0, 0.0, 0.5), (1.0, 1.0, 0.0), (1.0, 1.0, 0.5, -1.0),
                (math.nan, 1.0, 0.5)]:
        with pytest.raises(ValueError):
            make_params("m2", bad)
    with pytest.raises(ValueError):
        M1(-1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        make_params("m1", [1, 2])
    with pytest.raises(ValueError):
        Variant.parse("m4")
    with pytest.raises(ValueError):
        matern_eval(M1(1, 1, 1), -0.1)
    assert param_names("M3") == ("sigma2", "rho", "nu", "tau2")


RANGES = {"weak": 0.1, "medium": 0.3, "strong": 0.7}


def mp_beta(nu, h, level=0.05):
    f = lambda b: mp_m1(1.0, b, nu, h) - level
    return float(mpmath.findroot(f, (h / 50, h), solver="anderson"))


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.3])
@pytest.mark.parametrize("strength", sorted(RANGES))
def test_effective_range_calibration(nu, strength):
    h = RANGES[strength]
    beta = mp_beta(nu, h)
    if nu == 0.5:
        assert beta == pytest.approx(h / math.log(20.0), rel=1e-12)
    p1 = effective_range_solve("m1", nu, h)
    assert p1.beta == pytest.approx(beta, rel=1e-11)
    assert correlation(p1, h) == pytest.approx(0.05, abs=1e-13)
    for v in ("m2", "m3"):
        q = effective_range_solve(v, nu, h, nugget=0.1)
        assert q.variant.value == v and q.nugget == 0.1
        assert np.allclose(convert(q, "m1").values(), (1.0, beta, nu, 0.1), rtol=1e-10)


def test_effective_range_errors():
    with pytest.raises(ValueError):
        effective_range_solve("m1", 0.5, 0.3, level=1.5)
    with pytest.raises(ValueError):
        effective_range_solve("m1", 0.5, 0.0)


params_st = st.builds(
    lambda s, r, nu, t: M1(s, r, nu, t),
    st.floats(0.1, 10.0), st.floats(0.01, 1.0), st.floats(0.2, 4.0), st.floats(0.0, 1.0))


@settings(max_examples=60, deadline=None)
@given(p=params_st, target=st.sampled_from(VARIANTS), via=st.sampled_from(VARIANTS))
def test_conversion_round_trip(p, target, via):
    q = convert(convert(convert(p, target), via), "m1")
    assert np.allclose(q.values(), p.values(), rtol=1e-12, atol=0)


@settings(max_examples=60, deadline=None)
@given(p=params_st, target=st.sampled_from(VARIANTS),
       h=st.lists(st.floats(0.0, 3.0), min_size=1, max_size=20))
def test_conversion_preserves_covariance(p, target, h):
    h = np.array(h)
    assert np.allclose(matern_eval(convert(p, target), h), matern_eval(p, h), rtol=1e-10, atol=1e-12)


def test_partial_sill_and_inverse_range_agree():
    p = M1(1.7, 0.2, 1.3)
    for v in VARIANTS:
        q = convert(p, v)
        assert partial_sill(q) == pytest.approx(1.7, rel=1e-13)
        assert inverse_range(q) * {"m1": 0.2, "m2": 0.2, "m3": 0.2}[v] == pytest.approx(1.0)


def numeric_jacobian(source, target, at):
    # d theta_source / d theta_target by central differences on convert
    t = convert(at, target).array()
    J = np.empty((4, 4))
    for j in range(4):
        step = 1e-6 * max(abs(t[j]), 1e-3)
        hi, lo = t.copy(), t.copy()
        hi[j] += step
        lo[j] -= step if t[j] > 0 else 0.0
        J[:, j] = (convert(make_params(target, hi), source).array()
                   - convert(make_params(target, lo), source).array()) / (hi[j] - lo[j])
    return J


@pytest.mark.parametrize("source", VARIANTS)
@pytest.mark.parametrize("target", VARIANTS)
@pytest.mark.parametrize("at", [M1(1.0, 0.1, 0.5, 0.1), M1(2.0, 0.05, 1.7, 0.0), M1(0.7, 0.3, 3.0)])
def test_jacobian_against_numeric(source, target, at):
    J = jacobian(source, target, at)
    Jn = numeric_jacobian(source, target, at)
    assert np.allclose(J, Jn, rtol=1e-6, atol=1e-8 * np.abs(Jn).max())


def test_jacobian_chain_rule_and_point_variant():
    at = M1(1.2, 0.15, 1.4)
    J12, J23, J13 = jacobian("m1", "m2", at), jacobian("m2", "m3", at), jacobian("m1", "m3", at)
    assert np.allclose(J12 @ J23, J13, rtol=1e-12)
    assert np.allclose(jacobian("m1", "m2", convert(at, "m3")), J12, rtol=1e-12)
    assert np.array_equal(jacobian("m2", "m2", at), np.eye(4))
