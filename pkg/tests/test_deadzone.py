import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from obscert.deadzone import (
    DeadZoneSpec, ScenarioStats, batch_stats, bracket_weights, consistency_stat, cum_mean,
    deadzone_distance, prediction_error, scenario_stats, target_distance, total_cost,
)
from obscert.sampling import SamplingConfig, draw_scenario, draw_scenarios

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_subnormal=False)
rows = arrays(np.float64, st.integers(1, 25), elements=finite)
# power-of-two scaling is exact only while every intermediate stays normal
normal = st.one_of(st.just(0.0), st.floats(1e-200, 1e3), st.floats(-1e3, -1e-200))
normal_rows = arrays(np.float64, st.integers(1, 25), elements=normal)


def cum_mean_oracle(e):
    out = []
    for k in range(1, len(e) + 1):
        s = 0.0
        for j in range(k):
            s += e[j]
        out.append(abs(s / k))
    return np.array(out)


def test_cum_mean_examples():
    np.testing.assert_array_equal(cum_mean([1.0, -1.0]), [1.0, 0.0])
    np.testing.assert_array_equal(cum_mean(np.full(6, -0.25)), np.full(6, 0.25))


def test_cum_mean_oracle(rng):
    for _ in range(200):
        e = rng.normal(size=rng.integers(1, 30)) * 10.0 ** rng.uniform(-6, 2)
        np.testing.assert_array_equal(cum_mean(e), cum_mean_oracle(e))


def test_bracket_weights():
    np.testing.assert_array_equal(bracket_weights(4), [4.0, 2.0, 4 / 3, 1.0])
    np.testing.assert_array_equal(bracket_weights(4, "floor"), [4.0, 2.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        bracket_weights(3, "ceil")


def test_distance_examples():
    assert deadzone_distance(np.zeros(7), 0.3) == 0.0
    assert deadzone_distance([1.0, -1.0], 0.5) == 0.0
    assert deadzone_distance(np.full(4, 0.5), 0.0) == 2.0
    assert deadzone_distance(np.full(4, 0.5), 0.0, r=2) == 1.0


def test_total_cost_decomposes(rng):
    for _ in range(100):
        N, ny = rng.integers(1, 15), rng.integers(1, 4)
        E = rng.normal(size=(N, ny)) * 0.01
        scale = tuple(rng.uniform(0.5, 2.0, ny))
        spec = DeadZoneSpec(float(rng.uniform(0, 0.01)), scale, int(rng.integers(1, 4)))
        sizes = spec.sizes()
        expect = 0.0
        for i in range(ny):
            expect += deadzone_distance(E[:, i], sizes[i], spec.r)
        assert total_cost(E, spec) == expect
    e = rng.normal(size=(9, 1))
    assert total_cost(e, DeadZoneSpec(0.1)) == deadzone_distance(e[:, 0], 0.1)
    with pytest.raises(ValueError):
        total_cost(rng.normal(size=(5, 2)), DeadZoneSpec(0.1, (1.0, 1.0, 1.0)))


def test_spec_validation():
    for bad in (dict(zeta=-1.0), dict(zeta=0.1, scale=(0.0,)), dict(zeta=0.1, r=0),
                dict(zeta=0.1, bracket="ceil")):
        with pytest.raises(ValueError):
            DeadZoneSpec(**bad)


def test_consistency_stat_examples():
    assert consistency_stat([1.0, -1.0]) == 0.5
    assert consistency_stat(np.zeros(5)) == 0.0
    np.testing.assert_array_equal(consistency_stat(np.array([[1.0, -1.0], [0.0, 0.0]])), [0.5, 0.0])


def test_consistency_stat_sweep(rng):
    for _ in range(1000):
        e = rng.normal(size=rng.integers(1, 25)) * 10.0 ** rng.uniform(-5, 1)
        s = consistency_stat(e)
        for z in (s, np.nextafter(s, np.inf), s * rng.uniform(0, 2), s * 1.5):
            assert (deadzone_distance(e, z) == 0.0) == (z >= s)
        if s > 0:
            assert deadzone_distance(e, np.nextafter(s, -np.inf)) > 0.0


@settings(max_examples=300, deadline=None)
@given(rows, st.floats(0, 10), st.sampled_from([1, 2, 3]), st.sampled_from(["real", "floor"]))
def test_characterisation(e, z, r, bracket):
    s = consistency_stat(e, bracket)
    assert (deadzone_distance(e, z, r, bracket) == 0.0) == (z >= s)
    assert deadzone_distance(e, s, r, bracket) == 0.0
    if s > 0:
        assert deadzone_distance(e, np.nextafter(s, -np.inf), r, bracket) > 0.0


@settings(max_examples=200, deadline=None)
@given(rows, st.floats(0, 5), st.floats(0, 5), st.sampled_from([1, 2, 3]))
def test_monotone_in_zeta(e, z1, z2, r):
    lo, hi = sorted((z1, z2))
    assert deadzone_distance(e, hi, r) <= deadzone_distance(e, lo, r)


@settings(max_examples=200, deadline=None)
@given(normal_rows, st.one_of(st.just(0.0), st.floats(1e-200, 5)), st.integers(-20, 20))
def test_scale_equivariance(e, z, k):
    lam = 2.0**k
    assert deadzone_distance(lam * e, lam * z) == lam * deadzone_distance(e, z)
    assert consistency_stat(lam * e) == lam * consistency_stat(e)


def test_target_distance():
    assert target_distance([3.0, 0.0], [0.0, 4.0]) == 5.0
    assert target_distance([3.0, 0.0], [0.0, 4.0], "max") == 4.0
    with pytest.raises(ValueError):
        target_distance([1.0], [0.0], "l1")


def test_prediction_error_cases(cstr):
    s = draw_scenario(3, SamplingConfig(N=8, master_seed=2), cstr)
    np.testing.assert_array_equal(prediction_error(s, cstr, False), s.q_nu)
    c = draw_scenario(3, SamplingConfig(N=8, master_seed=2, candidate_mode="copy"), cstr)
    np.testing.assert_array_equal(prediction_error(c, cstr, True), c.q_nu)
    z = draw_scenario(3, SamplingConfig(N=8, noise=0.0, candidate_mode="copy"), cstr)
    np.testing.assert_array_equal(prediction_error(z, cstr, True), 0.0)
    assert not np.array_equal(prediction_error(s, cstr, True), s.q_nu)


def test_stats_degenerate_pairs(cstr):
    z = draw_scenario(0, SamplingConfig(N=6, noise=0.0, candidate_mode="copy"), cstr)
    st0 = scenario_stats(z, cstr, ["z1", "z2", "z3"])
    assert st0.a[0] == 0.0 and st0.b[0] == 0.0 and np.all(st0.dz == 0.0)
    n = draw_scenario(0, SamplingConfig(N=6, candidate_mode="copy"), cstr)
    st1 = scenario_stats(n, cstr, ["z2"])
    assert st1.a[0] == st1.b[0] > 0.0


def test_batch_stats_match_single(cstr):
    cfg = SamplingConfig(N=6, master_seed=9)
    scen, sims = draw_scenarios(range(20), cfg, cstr)
    both = batch_stats(scen, sims, cstr, ["z1", "z2", "z3"])
    assert len(both) == 20
    for k, s in enumerate(scen):
        one = scenario_stats(s, cstr, ["z1", "z2", "z3"])
        np.testing.assert_array_equal(both.a[k], one.a)
        np.testing.assert_array_equal(both.b[k], one.b)
        np.testing.assert_allclose(both.dz[k], one.dz, rtol=1e-15)
    sub = both.subset(5)
    assert len(sub) == 5 and list(sub.ids) == [0, 1, 2, 3, 4]


def test_max_norm_distances(cstr):
    cfg = SamplingConfig(N=4)
    scen, sims = draw_scenarios(range(5), cfg, cstr)
    st_max = batch_stats(scen, sims, cstr, ["z1"], norm="max")
    st_euc = batch_stats(scen, sims, cstr, ["z1"])
    assert np.all(st_max.dz <= st_euc.dz) and np.all(st_max.dz * np.sqrt(3) >= st_euc.dz * (1 - 1e-15))


def test_stats_container():
    s = ScenarioStats(np.zeros((3, 1)), np.ones((3, 1)), np.zeros((3, 2)))
    assert len(s) == 3 and len(s.subset(2)) == 2
