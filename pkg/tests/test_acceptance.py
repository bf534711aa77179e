"""Acceptance criteria 1-13.  Each test registers a PASS/FAIL line that the
terminal summary prints after the run."""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from factored_rl import cli
from factored_rl.agents import RunConfig, run_flat_ucbvi_ch, run_fmdp_bf, run_fmdp_ch
from factored_rl.environment import gen_production_line, gen_random_fmdp
from factored_rl.oracle import (
    chain_variance_bruteforce,
    chain_variance_recursive,
    decomposition_inequality_check,
    exact_optimal_values,
    total_variance_bound_check,
)
from factored_rl.planner import (
    EmpiricalModel,
    InvariantViolation,
    nested_variance,
    sweep_bernstein,
    sweep_hoeffding,
)
from factored_rl.rlwk import exact_augmented_dp, load_instance, run_rlwk_bf

SEEDS = list(range(10))
TWO_FACTOR = {
    "state_dims": [2, 2], "action_dims": [2], "reward_scopes": [[0, 2], [1, 2]],
    "transition_scopes": [[0, 2], [1, 2]], "horizon": 5, "seed": 0,
}


def two_factor_spec():
    p = TWO_FACTOR
    return gen_random_fmdp((p["state_dims"], p["action_dims"]), (p["reward_scopes"], p["transition_scopes"]),
                           p["horizon"], p["seed"])


def record(n, ok, detail):
    ACCEPTANCE_RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def random_chain(rng, H):
    spec = gen_random_fmdp(((2, 2), (2,)), ([(0, 1, 2), (0, 1, 2)], [(0, 1, 2), (0, 1, 2)]), H,
                           seed=int(rng.integers(2 ** 31)))
    return spec, rng.integers(0, 2, size=(H, 4))


def test_c01_variance_recursion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        spec, pol = random_chain(rng, 3)
        assert all(r.bernoulli.all() for r in spec.rewards) and spec.m == 2
        diff = chain_variance_recursive(spec, pol).omega2 - chain_variance_bruteforce(spec, pol)
        worst = max(worst, float(np.abs(diff).max()))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-9 and dt < 10, f"20 chains, max |diff| {worst:.2e}, {dt:.1f}s")


def test_c02_variance_additivity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worked = nested_variance([(0.5, 0.5), (0.5, 0.5)], [0, 1, 2, 3])
    worst = abs(sum(worked) - 1.25)
    ok_worked = worked == [1.0, 0.25]
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        sizes = rng.integers(1, 5, size=n)
        rows = [rng.dirichlet(np.ones(k)) for k in sizes]
        V = rng.uniform(0, 5, int(np.prod(sizes)))
        p = rows[0]
        for r in rows[1:]:
            p = np.multiply.outer(p, r)
        p = p.ravel()
        var = float(p @ (V - p @ V) ** 2)
        worst = max(worst, abs(sum(nested_variance(rows, V)) - var))
    dt = time.perf_counter() - t0
    record(2, ok_worked and worst <= 1e-12 and dt < 5,
           f"1000 pairs + worked 1.0+0.25, max |diff| {worst:.2e}, {dt:.1f}s")


def test_c03_total_variance_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    bad = 0
    worst_eq = 0.0
    for _ in range(100):
        spec, pol = random_chain(rng, 5)
        lhs, bound, ok = total_variance_bound_check(spec, pol)
        w1 = chain_variance_recursive(spec, pol).omega2[0, spec.initial_index]
        bad += not (ok and lhs <= bound + 1e-9)
        worst_eq = max(worst_eq, abs(lhs - w1))
    dt = time.perf_counter() - t0
    record(3, bad == 0 and worst_eq <= 1e-9 and dt < 30,
           f"100 pairs, {bad} bound failures, max |lhs - omega2| {worst_eq:.2e}, {dt:.1f}s")


def test_c04_decomposition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(104)
    fails, min_slack = 0, np.inf
    for _ in range(1000):
        hat = [rng.dirichlet(np.ones(3)) for _ in range(3)]
        true = [rng.dirichlet(np.ones(3)) for _ in range(3)]
        lhs, rhs, ok = decomposition_inequality_check(hat, true, rng.normal(size=27))
        fails += not ok
        min_slack = min(min_slack, rhs - lhs)
    dt = time.perf_counter() - t0
    record(4, fails == 0 and min_slack >= -1e-12 and dt < 5,
           f"1000 triples, {fails} failures, min slack {min_slack:.2e}, {dt:.1f}s")


def test_c05_planning_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        spec = gen_random_fmdp(((2, 3), (2,)), ([(0, 2), (1, 2)], [(0, 1, 2), (1, 2)]), 5, seed=seed)
        ex = exact_optimal_values(spec)
        model = EmpiricalModel.from_spec(spec)
        for sweep in (sweep_hoeffding, sweep_bernstein):
            t = sweep(spec.dims, model, None, spec.horizon, cb_override=0.0)
            worst = max(worst, float(np.abs(t.V_bar - ex.V_star).max()))
            if t.V_under is not None:
                worst = max(worst, float(np.abs(t.V_under - ex.V_star).max()))
    dt = time.perf_counter() - t0
    record(5, worst <= 1e-10 and dt < 10, f"20 specs, max |V - V*| {worst:.2e}, {dt:.1f}s")


def test_c06_flat_reduction():
    worst, same = 0.0, True
    for seed in range(3):
        spec = gen_random_fmdp(((4,), (3,)), ([(0, 1)], [(0, 1)]), 4, seed=seed)
        cfg = RunConfig(K=300, seed=seed, algorithm="ch")
        a = run_fmdp_ch(spec, cfg, keep_bonus=True)
        b = run_flat_ucbvi_ch(spec, cfg, keep_bonus=True)
        same &= a.actions == b.actions
        worst = max(worst, float(np.abs(np.array(a.bonuses) - np.array(b.bonuses)).max()))
    record(6, same and worst <= 1e-12, f"3 seeds x 300 episodes, actions equal={same}, max bonus diff {worst:.1e}")


def test_c07_optimism():
    t0 = time.perf_counter()
    spec = two_factor_spec()
    fracs = [np.mean(run_fmdp_bf(spec, RunConfig(K=2000, delta=0.1, seed=s)).optimism) for s in SEEDS]
    dt = time.perf_counter() - t0
    frac = float(np.mean(fracs))
    record(7, frac >= 0.95 and dt < 300, f"optimism fraction {frac:.4f} (min seed {min(fracs):.4f}), {dt:.0f}s")


def _criterion8_config(tmp_path):
    return {"spec": {"generator": "random", "params": TWO_FACTOR}, "algorithms": ["bf"],
            "K": 4000, "delta": 0.1, "seeds": SEEDS}


@pytest.fixture(scope="module")
def crit8_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("crit8")
    t0 = time.perf_counter()
    paths = cli.run_experiment(_criterion8_config(out), SEEDS, out / "first")
    return paths, time.perf_counter() - t0, out


def _cum_at(path, k):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return float(lines[k].split(",")[2])


def test_c08_sublinear(crit8_run):
    paths, dt, _ = crit8_run
    runs = [p for p in paths if p.name != "summary.csv"]
    c1000 = np.mean([_cum_at(p, 1000) for p in runs])
    c4000 = np.mean([_cum_at(p, 4000) for p in runs])
    ratio = c4000 / c1000
    record(8, ratio < 2.4 and dt < 600,
           f"CumReg(4000)/CumReg(1000) = {c4000:.1f}/{c1000:.1f} = {ratio:.2f} (need < 2.4), {dt:.0f}s")


def test_c09_factored_advantage():
    t0 = time.perf_counter()
    spec = gen_production_line(3, 2, 2, seed=0, horizon=5)
    assert spec.dims.S == 8 and spec.dims.A == 2
    bf = np.mean([run_fmdp_bf(spec, RunConfig(K=4000, seed=s)).cum_regret[-1] for s in SEEDS])
    flat = np.mean([run_flat_ucbvi_ch(spec, RunConfig(K=4000, seed=s, algorithm="flat-ch")).cum_regret[-1]
                    for s in SEEDS])
    dt = time.perf_counter() - t0
    record(9, bf < flat and dt < 900, f"mean CumReg BF {bf:.1f} vs flat {flat:.1f}, {dt:.0f}s")


@pytest.fixture(scope="module")
def rlwk_runs():
    runs = {}
    for name in ("fig1-instance1", "fig1-instance2"):
        aug = load_instance(name)
        t0 = time.perf_counter()
        recs, violations = [], []
        for s in SEEDS:
            try:
                recs.append(run_rlwk_bf(aug, K=5000, delta=0.1, seed=s))
            except InvariantViolation as exc:
                violations.append((s, str(exc)))
        runs[name] = (aug, recs, violations, time.perf_counter() - t0)
    return runs


def test_c10_rlwk_instance1(rlwk_runs):
    aug, recs, viol, dt = rlwk_runs["fig1-instance1"]
    ex = exact_augmented_dp(aug)
    b = aug.full_budget
    exact_ok = ex.V[0, 0, b] == 0.5 and ex.Q[0, 0, b, 1] == 0.4
    hits = sum(int(r.final_policy[0, 0, b]) == 0 for r in recs)
    record(10, exact_ok and hits >= 9 and not viol and dt < 300,
           f"V*={ex.V[0, 0, b]}, Q(a2)={ex.Q[0, 0, b, 1]}, learner a1 in {hits}/10 seeds, {dt:.0f}s")


def test_c11_rlwk_instance2(rlwk_runs):
    aug, recs, viol, _ = rlwk_runs["fig1-instance2"]
    ex = exact_augmented_dp(aug)
    hi, lo = aug.budget_index((1,)), aug.budget_index((0,))
    exact_ok = ex.pi[1, 1, hi] == 1 and ex.pi[1, 1, lo] == 0
    hits = sum(int(r.final_policy[1, 1, hi]) == 1 and int(r.final_policy[1, 1, lo]) == 0 for r in recs)
    record(11, exact_ok and hits >= 9 and not viol,
           f"exact a2@b=0.5, a1@b=0: {exact_ok}; learner matches both in {hits}/10 seeds")


def test_c12_hard_constraint(rlwk_runs):
    worst, episodes, viol = 0, 0, []
    for aug, recs, v, _ in rlwk_runs.values():
        viol += v
        for r in recs:
            episodes += len(r.max_cost_used)
            worst = max(worst, max(c[0] for c in r.max_cost_used) - aug.grid.units[0])
    record(12, not viol and worst <= 0,
           f"{episodes} episodes, {len(viol)} assertion failures, max continuing cost - B = {worst} units")


def test_c13_determinism(crit8_run):
    paths, _, out = crit8_run
    again = cli.run_experiment(_criterion8_config(out), SEEDS, out / "second")
    same = all(a.read_bytes() == b.read_bytes() for a, b in zip(paths, again))
    record(13, same and len(paths) == len(again) == 11, f"{len(paths)} CSVs byte-identical={same}")
