import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maternlab.covmat import assemble
from maternlab.matern import M1
from maternlab.sim import (GridSpec, StudyConfig, gen_field, gen_locations, replicate_seeds,
                           replicate_study, rng_from, sample_stats)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(2, 30), seed=st.integers(0, 2 ** 32 - 1))
def test_jittered_grid_inside_unit_square(k, seed):
    c = gen_locations(GridSpec(k * k, seed=seed)).coords
    assert c.shape == (k * k, 2)
    assert np.all(c > 0) and np.all(c < 1)
    # each point stays inside its own cell
    cell = np.floor(c * k)
    assert len({tuple(r) for r in cell}) == k * k


def test_regular_grid_and_spacing():
    c = gen_locations(GridSpec(16, "regular")).coords
    assert np.allclose(np.unique(c[:, 0]), (np.arange(1, 5) - 0.5) / 4)
    c2 = gen_locations(GridSpec(16, "regular", delta=0.1)).coords
    assert np.allclose(c2, 0.1 * c)


def test_grid_validation():
    for bad in (dict(n=10), dict(n=1), dict(n=16, kind="hex"), dict(n=16, delta=0.0)):
        with pytest.raises(ValueError):
            GridSpec(**bad)


def test_determinism_and_rng():
    a = gen_locations(GridSpec(25, seed=3)).coords
    assert np.array_equal(a, gen_locations(GridSpec(25, seed=3)).coords)
    assert not np.array_equal(a, gen_locations(GridSpec(25, seed=4)).coords)
    assert isinstance(rng_from(1).bit_generator, np.random.Philox)
    s = replicate_seeds(5, 3)
    assert len({x.entropy for x in s}) == 1 and len({tuple(x.spawn_key) for x in s}) == 3


def test_field_covariance():
    locs = gen_locations(GridSpec(9, seed=1))
    p = M1(2.0, 0.3, 1.2, 0.1)
    draws = np.array([gen_field(locs, p, i) for i in range(4000)])
    emp = np.cov(draws.T)
    assert np.allclose(emp, assemble(locs, p).data, atol=0.2)


def test_sample_stats():
    s = sample_stats(np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]]))
    assert np.allclose(s["mean"], [3, 2]) and np.allclose(s["sv"], [4, 0])
    assert np.allclose(s["iqr"], [2, 0])


def test_config_validation():
    with pytest.raises(ValueError):
        StudyConfig.from_mapping({"bogus": 1})
    with pytest.raises(ValueError):
        StudyConfig.from_mapping({"n": "abc"})
    for bad in (dict(strengths=("huge",)), dict(variants=("m5",)), dict(holdout=1.0),
                dict(n=50), dict(replicates=0), dict(nus=(-1.0,)), dict(optimizer="x")):
        with pytest.raises(ValueError):
            StudyConfig(**bad)
    c = StudyConfig.from_mapping({"nus": "0.5, 1", "nugget": "yes", "variants": "M1"})
    assert c.nus == (0.5, 1.0) and c.nugget and c.variants == ("m1",)


@pytest.fixture(scope="module")
def tiny_config():
    return StudyConfig(variants=("m1", "m3"), strengths=("medium",), n=49, replicates=3, seed=9)


def test_study_is_deterministic_and_order_free(tiny_config):
    a = replicate_study(tiny_config, threads=1)
    b = replicate_study(tiny_config, threads=2)
    assert a.tables == b.tables
    assert a.failures == 0 and len(a.records) == 6
    keys = {(r["variant"], r["parameter"]) for r in a.tables["estimates"]}
    assert ("m3", "rho") in keys and ("m1", "beta") in keys
    asym = a.tables["asymptotics"]
    assert all(r["tav"] > 0 and "drv" in r for r in asym)


def test_shared_locations(tiny_config):
    from dataclasses import replace
    from maternlab.sim import _replicate_data
    c = replace(tiny_config, share_locations=True)
    l0, l1 = _replicate_data(c, 0)[0], _replicate_data(c, 1)[0]
    assert np.array_equal(l0.coords, l1.coords)
    d0, d1 = _replicate_data(tiny_config, 0)[0], _replicate_data(tiny_config, 1)[0]
    assert not np.array_equal(d0.coords, d1.coords)
