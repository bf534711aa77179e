import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factored_rl.bonuses import LogFactors
from factored_rl.environment import gen_random_fmdp
from factored_rl.estimation import Estimators
from factored_rl.model import DimensionError, FactorDims
from factored_rl.oracle import exact_optimal_values
from factored_rl.planner import (
    EmpiricalModel,
    InvariantViolation,
    factored_backup,
    nested_variance,
    sweep_bernstein,
    sweep_hoeffding,
    u_term,
)

HALF = [(0.5, 0.5), (0.5, 0.5)]


def test_backup_examples():
    assert factored_backup(HALF, [0, 1, 2, 3]) == pytest.approx(1.5, abs=1e-15)
    assert factored_backup([(0, 1), (1, 0)], [0, 1, 2, 3]) == 2.0
    assert factored_backup([(0.3, 0.7), (0.1, 0.2, 0.7)], [4.0] * 6) == pytest.approx(4.0, abs=1e-15)
    with pytest.raises(DimensionError):
        factored_backup(HALF, [0, 1, 2])


def test_nested_variance_examples():
    sig = nested_variance(HALF, [0, 1, 2, 3])
    assert sig == pytest.approx([1.0, 0.25], abs=1e-15)
    assert sum(sig) == pytest.approx(3.5 - 1.5 ** 2, abs=1e-12)
    assert nested_variance(HALF, [2.0] * 4) == [0.0, 0.0]


def test_u_term_examples():
    assert u_term(HALF, [1, 2, 3, 4], [1, 2, 3, 4]) == [0.0, 0.0]
    assert u_term(HALF, [3.0] * 4, [1.0] * 4) == pytest.approx([4.0, 4.0])
    assert u_term(HALF, [0, 0, 2, 2], [0, 0, 0, 0]) == pytest.approx([2.0, 2.0])
    with pytest.raises(InvariantViolation):
        u_term(HALF, [0, 0, 0, 0], [0, 1, 0, 0])


@st.composite
def rows_and_values(draw):
    n = draw(st.integers(1, 3))
    sizes = [draw(st.integers(1, 4)) for _ in range(n)]
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    rows = [rng.dirichlet(np.ones(k)) for k in sizes]
    V = rng.uniform(-5, 5, int(np.prod(sizes)))
    return rows, V


def _naive(rows, V):
    total, var_terms = 0.0, []
    probs = []
    for idx in itertools.product(*[range(len(r)) for r in rows]):
        probs.append(np.prod([r[i] for r, i in zip(rows, idx)]))
    probs = np.array(probs)
    mean = float(probs @ V)
    return mean, float(probs @ (V - mean) ** 2)


@settings(max_examples=200, deadline=None)
@given(rows_and_values())
def test_backup_matches_enumeration(rv):
    rows, V = rv
    mean, var = _naive(rows, V)
    assert factored_backup(rows, V) == pytest.approx(mean, abs=1e-12)
    assert sum(nested_variance(rows, V)) == pytest.approx(var, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(rows_and_values())
def test_u_term_bounds(rv):
    rows, V = rv
    gap = np.abs(V) / 5.0
    u = u_term(rows, gap, np.zeros_like(gap))
    assert all(-1e-15 <= x <= 1.0 + 1e-12 for x in u)
    # later factors average over fewer coordinates, so u is non-decreasing in i
    assert all(a <= b + 1e-12 for a, b in zip(u, u[1:]))


def _one_cell_model(R, count=1):
    dims = FactorDims((1,), (1,))
    return dims, EmpiricalModel(dims, np.array([[R]]), np.zeros((1, 1)), np.full((1, 1), count),
                                [np.ones((1, 1))], np.full((1, 1), count), np.ones(1, dtype=bool))


def test_hoeffding_sweep_hand_recursion():
    dims, model = _one_cell_model(0.5)
    t = sweep_hoeffding(dims, model, None, 2, cb_override=0.3)
    assert t.Q_bar[1, 0, 0] == pytest.approx(0.8, abs=1e-15)
    assert t.Q_bar[0, 0, 0] == pytest.approx(1.6, abs=1e-15)
    assert t.V_bar[2, 0] == 0.0


def test_bernstein_sweep_one_step():
    dims, model = _one_cell_model(0.5)
    t = sweep_bernstein(dims, model, None, 1, cb_override=0.2)
    assert t.V_bar[0, 0] == pytest.approx(0.7, abs=1e-15)
    assert t.V_under[0, 0] == pytest.approx(0.3, abs=1e-15)


def _spec(seed=0, H=4):
    return gen_random_fmdp(((2, 3), (2,)), ([(0, 2), (1, 2)], [(0, 1, 2), (1, 2)]), H, seed=seed)


def test_no_data_sweeps():
    spec = _spec()
    est = Estimators.for_spec(spec)
    logf = LogFactors.for_dims(spec.dims, [r.scope for r in spec.rewards], 10, spec.horizon, 0.1)
    th = sweep_hoeffding(spec.dims, est, logf, spec.horizon)
    tb = sweep_bernstein(spec.dims, est, logf, spec.horizon)
    for t in (th, tb):
        assert np.all(t.Q_bar == spec.horizon)
        assert np.all(t.policy == 0)
    assert np.all(tb.V_under == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_exact_model_zero_bonus_matches_oracle(seed):
    spec = _spec(seed)
    ex = exact_optimal_values(spec)
    model = EmpiricalModel.from_spec(spec)
    for sweep in (sweep_hoeffding, sweep_bernstein):
        t = sweep(spec.dims, model, None, spec.horizon, cb_override=0.0)
        np.testing.assert_allclose(t.V_bar, ex.V_star, atol=1e-10)
        np.testing.assert_array_equal(t.policy, ex.pi_star)
    np.testing.assert_allclose(t.V_under, ex.V_star, atol=1e-10)


def test_huge_counts_bonus_vanishes():
    spec = _spec(3)
    ex = exact_optimal_values(spec)
    model = EmpiricalModel.from_spec(spec, count=10 ** 18)
    logf = LogFactors.for_dims(spec.dims, [r.scope for r in spec.rewards], 10, spec.horizon, 0.1)
    t = sweep_hoeffding(spec.dims, model, logf, spec.horizon)
    np.testing.assert_allclose(t.V_bar[0], ex.V_star[0], atol=1e-6)


def test_sweeps_respect_bounds_on_learned_data():
    from factored_rl.environment import Simulator
    spec = _spec(1)
    H = spec.horizon
    sim = Simulator(spec)
    est = Estimators.for_spec(spec)
    logf = LogFactors.for_dims(spec.dims, [r.scope for r in spec.rewards], 200, H, 0.1)
    rng = np.random.default_rng(0)
    for k in range(200):
        est.update(sim.run(rng.integers(0, spec.dims.A, size=(H, spec.dims.S)), (0, 0), seed=9, episode=k))
        if k % 20 == 19:
            for scale in (1.0, 0.05):
                t = sweep_bernstein(spec.dims, est, logf, H, bonus_scale=scale)
                t.check(H)
                assert np.all(t.Q_bar <= H) and np.all(t.V_under >= 0)
                assert np.all(t.V_under <= t.V_bar + 1e-12)
                assert np.all(t.V_bar[H] == 0) and np.all(t.V_under[H] == 0)
