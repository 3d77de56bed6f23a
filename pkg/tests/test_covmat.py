import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maternlab.covmat import (CovMatrix, LocationSet, NotPositiveDefiniteError, assemble,
                              assemble_cross, assemble_derivative, assemble_derivatives,
                              cholesky_lower)
from maternlab.matern import M1, M2, M3, convert, make_params, matern_eval


def locs(n, seed=0):
    return LocationSet(np.random.default_rng(seed).uniform(size=(n, 2)))


def test_assemble_matches_pointwise_evaluation():
    L = locs(30)
    for p in (M1(1.5, 0.1, 0.5, 0.2), M2(3.0, 8.0, 1.3), M3(0.7, 0.2, 2.4, 0.01)):
        C = assemble(L, p).data
        assert np.allclose(C, matern_eval(p, L.distances()), rtol=1e-13, atol=1e-15)
        assert np.array_equal(C, C.T)


@settings(max_examples=15, deadline=None)
@given(nb=st.integers(1, 40), n=st.integers(2, 40))
def test_tile_size_does_not_change_entries(nb, n):
    L = locs(n, 3)
    p = M1(1.0, 0.2, 1.7, 0.05)
    assert np.array_equal(assemble(L, p, nb=nb).data, assemble(L, p, nb=n).data)


def test_cross_covariance_consistency():
    L = locs(25)
    p = M3(1.2, 0.3, 1.1)
    a, b = L.subset(range(10)), L.subset(range(10, 25))
    full = assemble(L, p).data
    assert np.allclose(assemble_cross(a, b, p), full[:10, 10:], rtol=1e-14, atol=0)


def test_location_set_validation_and_readonly():
    with pytest.raises(ValueError):
        LocationSet(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        LocationSet(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError):
        LocationSet(np.zeros((2, 2)), nb=0)
    L = locs(4)
    with pytest.raises(ValueError):
        L.coords[0, 0] = 1.0


def test_cholesky_failure_reports_minor():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky_lower(a)
    assert info.value.minor == 2
    assert isinstance(info.value, np.linalg.LinAlgError)
    # duplicated location without nugget is singular
    c = np.array([[0.2, 0.3], [0.2, 0.3], [0.8, 0.1]])
    with pytest.raises(NotPositiveDefiniteError):
        assemble(LocationSet(c), M1(1.0, 0.1, 0.5)).cholesky()
    cm = assemble(LocationSet(c), M1(1.0, 0.1, 0.5, 0.1))
    cm.cholesky()
    assert cm.data[0, 0] == 1.1 and cm.data[0, 1] == 1.0


def test_cached_cholesky():
    cm = assemble(locs(12), M1(1.0, 0.2, 0.9))
    assert isinstance(cm, CovMatrix)
    assert cm.cholesky() is cm.cholesky()
    L = cm.cholesky()
    assert np.allclose(L @ L.T, cm.data, atol=1e-13)


def central_fd(L, p, idx, rel=1e-6):
    v = np.array(p.values())
    step = rel * v[idx] if v[idx] > 0 else 1e-7
    hi, lo = v.copy(), v.copy()
    hi[idx] += step
    lo[idx] = max(lo[idx] - step, 0.0)
    return (assemble(L, make_params(p.variant, hi)).data
            - assemble(L, make_params(p.variant, lo)).data) / (hi[idx] - lo[idx])


@pytest.mark.parametrize("p", [M1(1.3, 0.15, 1.2, 0.1), M2(4.0, 6.0, 0.8, 0.1),
                               M3(0.9, 0.25, 2.2, 0.1)], ids=["m1", "m2", "m3"])
def test_derivatives_with_coincident_points(p):
    c = np.random.default_rng(4).uniform(size=(9, 2))
    c[5] = c[2]
    L = LocationSet(c)
    for idx, D in enumerate(assemble_derivatives(L, p)):
        ref = central_fd(L, p, idx)
        assert np.allclose(D, ref, rtol=0, atol=2e-5 * np.abs(ref).max())
    nug = assemble_derivative(L, p, 3)
    assert np.array_equal(nug, np.eye(9))


def test_derivative_index_validation():
    with pytest.raises(ValueError):
        assemble_derivatives(locs(3), M1(1, 1, 1), (4,))


def test_scale_derivative_is_matrix_over_scale():
    L = locs(15)
    p = M2(2.5, 5.0, 1.4, 0.3)
    D = assemble_derivative(L, p, 0)
    S = assemble(L, p).data - 0.3 * np.eye(15)
    assert np.allclose(D, S / 2.5, rtol=1e-13)


def test_variants_give_same_matrix():
    L = locs(40)
    p = M1(1.0, 0.1, 1.5, 0.1)
    base = assemble(L, p).data
    for v in ("m2", "m3"):
        assert np.allclose(assemble(L, convert(p, v)).data, base, rtol=0, atol=1e-13)
