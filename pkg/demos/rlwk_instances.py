"""Exact budget-aware values on the two knapsack instances, plus a short learner run.

Usage: python demos/rlwk_instances.py [K]
"""
import sys

from factored_rl.rlwk import exact_augmented_dp, load_instance, run_rlwk_bf

K = int(sys.argv[1]) if len(sys.argv) > 1 else 300

for name in ("fig1-instance1", "fig1-instance2"):
    aug = load_instance(name)
    ex = exact_augmented_dp(aug)
    print(f"{name}: H={aug.H}, budget={aug.grid.B[0]}, augmented states={aug.n_states}")
    print(f"  V*(s0, full budget) = {ex.V[0, 0, aug.full_budget]}")
    for b in range(aug.grid.n_budgets):
        units = aug.budget_units(b)[0]
        print(f"  step 2, s1, budget {units / aug.grid.q}: best action a{ex.pi[1, 1, b] + 1}, "
              f"Q = {ex.Q[1, 1, b].tolist()}")
    rec = run_rlwk_bf(aug, K=K, seed=0)
    print(f"  learner, K={K}: cumulative regret {rec.cum_regret[-1]:.2f}, "
          f"early terminations {sum(rec.terminated_early)}")
