import warnings

import numpy as np
import pytest

from obscert.deadzone import DeadZoneSpec
from obscert.errors import BudgetExhausted
from obscert.estimator import (
    MheProblem, mhe_solve, reconstruct_target, run_mhe_trace, window_cost, window_costs,
)
from obscert.model import simulate_flow
from obscert.sampling import sample_input_fourier

X0 = np.array([0.3, 0.1, 0.12])


@pytest.fixture
def window(cstr):
    u = sample_input_fourier(cstr.input_box, 20, 10, 0.2, None, np.random.default_rng(3))
    states, y = simulate_flow(cstr, X0, u, cstr.p_nom, 20)
    return u, states, y


def p_box(model, rel=0.2):
    return np.stack([(1 - rel) * model.p_nom, (1 + rel) * model.p_nom], axis=1)


def test_truth_start_returns_truth(cstr, window):
    u, _, y = window
    prob = MheProblem(y, u, DeadZoneSpec(0.0), cstr.state_box, p_box(cstr), 4, 200,
                      starts=[(X0, cstr.p_nom)])
    res = mhe_solve(prob, cstr)
    assert res.cost == 0.0 and res.start_costs[0] == 0.0
    np.testing.assert_array_equal(res.xi, X0)
    np.testing.assert_array_equal(res.p, cstr.p_nom)


def test_window_cost_batch_agrees(cstr, window, rng):
    u, _, y = window
    xs = cstr.state_box[:, 0] + rng.random((10, 3)) * np.ptp(cstr.state_box, axis=1)
    xs[:, 2] = np.maximum(xs[:, 2], 0.06)
    ps = cstr.p_nom * rng.uniform(0.8, 1.2, (10, 3))
    spec = DeadZoneSpec(1e-4)
    J = window_costs(cstr, xs, ps, y, u, spec)
    for k in range(10):
        assert J[k] == window_cost(cstr, xs[k], ps[k], y, u, spec)
    assert window_cost(cstr, X0, cstr.p_nom, y, u, spec) == 0.0
    bad = np.array([0.3, 0.1, -0.1])
    assert window_cost(cstr, bad, cstr.p_nom, y, u, spec) == np.inf
    assert window_costs(cstr, bad[None], cstr.p_nom[None], y, u, spec)[0] == np.inf


def test_descent_over_every_start(cstr, window):
    u, _, y = window
    y = y + 0.001 * np.random.default_rng(1).uniform(-1, 1, y.shape)
    starts = [(np.array([0.2, 0.2, 0.1]), cstr.p_nom * 1.1), (np.array([0.5, 0.05, 0.15]), cstr.p_nom)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        res = mhe_solve(MheProblem(y, u, DeadZoneSpec(1e-4), cstr.state_box, p_box(cstr), 6, 150,
                                   starts=starts, seed=4), cstr)
    assert len(res.start_costs) == 6
    assert res.cost >= 0.0 and all(res.cost <= j for j in res.start_costs)
    assert res.cost == window_cost(cstr, res.xi, res.p, y, u, DeadZoneSpec(1e-4))
    assert np.all(res.xi >= cstr.state_box[:, 0]) and np.all(res.xi <= cstr.state_box[:, 1])


def test_budget_warning(cstr, window):
    u, _, y = window
    prob = MheProblem(y, u, DeadZoneSpec(0.0), cstr.state_box, p_box(cstr), 2, 10, seed=1)
    with pytest.warns(BudgetExhausted) as rec:
        res = mhe_solve(prob, cstr)
    assert res.budget_exhausted and rec[0].message.cost == res.cost


def test_deterministic(cstr, window):
    u, _, y = window
    prob = MheProblem(y, u, DeadZoneSpec(0.0), cstr.state_box, p_box(cstr), 3, 100, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        r1, r2 = mhe_solve(prob, cstr), mhe_solve(prob, cstr)
    np.testing.assert_array_equal(r1.xi, r2.xi)
    assert r1.cost == r2.cost


@pytest.mark.slow
def test_recovers_concentration_from_random_starts(cstr, window):
    u, states, y = window
    prob = MheProblem(y, u, DeadZoneSpec(0.0), cstr.state_box, p_box(cstr), 16, 500, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        res = mhe_solve(prob, cstr)
    z = reconstruct_target(res.xi, res.p, u, cstr, "z2")
    assert abs(z[0] - states[-1, 0]) < 1e-2


def test_reconstruct_target(cstr, window):
    u, states, _ = window
    np.testing.assert_array_equal(reconstruct_target(X0, cstr.p_nom, u, cstr, "z1"), states[-1])
    assert reconstruct_target(X0, cstr.p_nom, u, cstr, "z3")[0] == states[-1, 2]
    np.testing.assert_array_equal(reconstruct_target(X0, cstr.p_nom, u[:0], cstr, "z1"), X0)
    np.testing.assert_array_equal(reconstruct_target(X0, cstr.p_nom, u, cstr, "p"), cstr.p_nom)


def test_trace_seeded_at_truth(cstr):
    steps, N = 12, 5
    u = sample_input_fourier(cstr.input_box, steps, 10, 0.2, None, np.random.default_rng(0))
    rows = run_mhe_trace(cstr, X0, cstr.p_nom, u, np.zeros((steps, 1)), N, steps,
                         DeadZoneSpec(0.0), "z1", multistart_count=2, max_evals=50, seed_truth=True)
    assert len(rows) == steps - N + 1
    assert [r[0] for r in rows] == list(range(N, steps + 1))
    for _, z_true, z_hat, J in rows:
        assert J == 0.0
        np.testing.assert_array_equal(z_hat, z_true)
    with pytest.raises(ValueError):
        run_mhe_trace(cstr, X0, cstr.p_nom, u, np.zeros((steps, 1)), 20, steps, DeadZoneSpec(0.0))
