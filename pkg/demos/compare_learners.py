"""Compare the factored learners with the flat baseline on a small production line.

Usage: python demos/compare_learners.py [K] [seeds]
"""
import sys

import numpy as np

from factored_rl import RunConfig, gen_production_line, run_agent

K = int(sys.argv[1]) if len(sys.argv) > 1 else 500
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 3

spec = gen_production_line(3, 2, 2, seed=0, horizon=5)
print(f"production line: flat S={spec.dims.S}, A={spec.dims.A}, H={spec.horizon}, K={K}")
for alg in ("bf", "ch", "flat-ch"):
    finals = [run_agent(spec, RunConfig(K=K, seed=s, algorithm=alg)).cum_regret[-1] for s in range(n_seeds)]
    print(f"{alg:>8}: mean cumulative regret {np.mean(finals):8.2f} (std {np.std(finals):.2f})")
