"""Command-line experiment runner: ``factored-rl <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import environment as envmod
from .agents import ALGORITHMS, RunConfig, run_agent
from .estimation import Estimators, counts_rows
from .model import load_spec, save_spec, spec_from_dict, validate_spec
from .planner import InvariantViolation
from .rlwk import INSTANCES, aug_from_dict, load_augmented, load_instance, run_rlwk_bf

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_VERIFY = 0, 2, 3, 4

GENERATORS = {
    "random": lambda p: envmod.gen_random_fmdp(
        (p["state_dims"], p["action_dims"]), (p["reward_scopes"], p["transition_scopes"]),
        p["horizon"], p["seed"], p.get("initial_state", ())),
    "production_line": lambda p: envmod.gen_production_line(
        p["d"], p["per_machine_states"], p["actions"], p["seed"], p.get("horizon", 5)),
    "tree_bandit": lambda p: envmod.gen_tree_bandit_instance(
        p["num_factors"], p["states_per_factor"], p["actions_per_factor"], p["gap"], p["H"]),
    "parallel_hard": lambda p: envmod.gen_parallel_hard_mdps(
        p["num_factors"], p["states"], p["actions"], p["epsilon"], p["H"], p["seed"]),
}


class ConfigError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_config(path) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_dir"] = str(Path(path).resolve().parent)
    return cfg


def spec_from_config(cfg: dict):
    src = cfg.get("spec")
    if src is None:
        raise ConfigError("config has no 'spec' entry")
    try:
        if "path" in src:
            p = Path(src["path"])
            if not p.is_absolute():
                p = Path(cfg.get("_dir", ".")) / p
            spec = load_spec(p)
        elif "generator" in src:
            if src["generator"] not in GENERATORS:
                raise ConfigError(f"unknown generator {src['generator']!r}; known: {sorted(GENERATORS)}")
            spec = GENERATORS[src["generator"]](src.get("params", {}))
        elif "inline" in src:
            spec = spec_from_dict(src["inline"])
        else:
            raise ConfigError("spec entry needs 'path', 'generator' or 'inline'")
    except ConfigError:
        raise
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build spec: {exc!r}") from exc
    return spec


def parse_seeds(text, cfg) -> list[int]:
    if text:
        try:
            return [int(s) for s in text.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value {text!r}") from exc
    seeds = cfg.get("seeds", [0])
    if not seeds:
        raise ConfigError("seeds list is empty")
    return [int(s) for s in seeds]


def worker_count(jobs: int) -> int:
    cap = os.environ.get("FACTORED_RL_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            pass
    return max(1, min(n, jobs))


def parallel_map(fn, items):
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def _run_one(spec, alg, K, delta, seed, init):
    return run_agent(spec, RunConfig(K=K, delta=delta, seed=seed, algorithm=alg, initial_state=init))


def checkpoints(K: int) -> list[int]:
    return sorted({max(1, K // 4), max(1, K // 2), K})


def run_experiment(cfg: dict, seeds, out: Path) -> list[Path]:
    """Write one CSV per (algorithm, seed) plus ``summary.csv``; return the paths."""
    spec = spec_from_config(cfg)
    problems = validate_spec(spec)
    if problems:
        raise ConfigError("invalid spec: " + "; ".join(problems[:5]))
    algs = cfg.get("algorithms", ["bf"])
    bad = [a for a in algs if a not in ALGORITHMS]
    if bad or not algs:
        raise ConfigError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
    try:
        K, delta = int(cfg["K"]), float(cfg.get("delta", 0.1))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config needs an integer episode budget K: {exc!r}") from exc
    if K < 1 or not 0.0 < delta < 1.0:
        raise ConfigError("need K >= 1 and delta in (0, 1)")
    init = tuple(cfg["initial_state"]) if cfg.get("initial_state") is not None else None
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, a, K, delta, s, init) for a in algs for s in seeds]
    records = parallel_map(_run_one, jobs)
    paths = []
    summary = []
    for (_, alg, _, _, seed, _), rec in zip(jobs, records):
        p = out / f"{alg}_seed{seed}.csv"
        write_csv(p, ["episode", "k_regret", "cum_regret", "optimism_flag"], rec.csv_rows())
        paths.append(p)
    for alg in algs:
        recs = [r for (_, a, *_), r in zip(jobs, records) if a == alg]
        for c in checkpoints(K):
            vals = np.array([r.cum_regret[c - 1] for r in recs])
            summary.append((alg, c, float(vals.mean()), float(vals.std())))
    p = out / "summary.csv"
    write_csv(p, ["algorithm", "episode", "mean_cum_regret", "std_cum_regret"], summary)
    paths.append(p)
    return paths


# --- verification suites ------------------------------------------------------------

def _random_chain(rng, n=2, m=2, size=2, H=3, A=2):
    from .environment import gen_random_fmdp
    seed = int(rng.integers(2 ** 31))
    scopes = [tuple(range(n + 1))] * n
    spec = gen_random_fmdp(((size,) * n, (A,)), ([tuple(range(n + 1))] * m, scopes), H, seed)
    policy = rng.integers(0, A, size=(H, size ** n))
    return spec, policy


def suite_variance_identity(seed: int, trials: int):
    from .oracle import chain_variance_bruteforce, chain_variance_recursive
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(trials):
        spec, pol = _random_chain(rng)
        a = chain_variance_recursive(spec, pol).omega2
        b = chain_variance_bruteforce(spec, pol)
        ok += bool(np.max(np.abs(a - b)) <= 1e-9)
    return ok, trials


def suite_total_variance(seed: int, trials: int):
    from .oracle import chain_variance_recursive, total_variance_bound_check
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(trials):
        spec, pol = _random_chain(rng, n=2, m=2, size=2, H=5)
        lhs, bound, good = total_variance_bound_check(spec, pol)
        w1 = chain_variance_recursive(spec, pol).omega2[0, spec.initial_index]
        ok += bool(good and abs(lhs - w1) <= 1e-9)
    return ok, trials


def suite_decomposition(seed: int, trials: int):
    from .oracle import decomposition_inequality_check
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(trials):
        hat = [rng.dirichlet(np.ones(3)) for _ in range(3)]
        true = [rng.dirichlet(np.ones(3)) for _ in range(3)]
        V = rng.normal(size=27)
        ok += decomposition_inequality_check(hat, true, V)[2]
    return ok, trials


def run_suites(seed: int, trials: int, out=None) -> bool:
    out = out or sys.stdout
    suites = [
        ("variance-recursion", suite_variance_identity, max(1, min(trials, 20))),
        ("total-variance-bound", suite_total_variance, max(1, min(trials, 100))),
        ("decomposition-lemma", suite_decomposition, trials),
    ]
    all_ok = True
    print(f"{'suite':<22} {'passed':>8} {'trials':>8}  result", file=out)
    for name, fn, n in suites:
        passed, total = fn(seed, n)
        good = passed == total
        all_ok &= good
        print(f"{name:<22} {passed:>8} {total:>8}  {'PASS' if good else 'FAIL'}", file=out)
    return all_ok


# --- subcommands ----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = read_config(args.config)
    out = Path(args.out or cfg.get("out", "results"))
    paths = run_experiment(cfg, parse_seeds(args.seeds, cfg), out)
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = read_config(args.config)
    spec = spec_from_config(cfg)
    if args.out:
        save_spec(spec, args.out)
        print(f"wrote {args.out}")
    else:
        from .model import dumps_spec
        print(dumps_spec(spec))
    return EXIT_OK


def cmd_verify(args) -> int:
    ok = True
    if args.config:
        cfg = read_config(args.config)
        spec = spec_from_config(cfg)
        problems = validate_spec(spec)
        if problems:
            print("spec validation FAILED:")
            for p in problems:
                print(f"  {p}")
            ok = False
        else:
            print("spec validation passed")
    seed = parse_seeds(args.seeds, {"seeds": [0]})[0]
    ok &= run_suites(seed, args.trials)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_check_variance(args) -> int:
    seed = parse_seeds(args.seeds, {"seeds": [0]})[0]
    return EXIT_OK if run_suites(seed, args.trials) else EXIT_VERIFY


def _rlwk_one(doc, K, delta, seed):
    return run_rlwk_bf(aug_from_dict(doc), K, delta, seed)


def cmd_rlwk(args) -> int:
    cfg = read_config(args.config)
    try:
        if "instance" in cfg:
            aug = load_instance(cfg["instance"])
        elif "path" in cfg:
            p = Path(cfg["path"])
            aug = load_augmented(p if p.is_absolute() else Path(cfg["_dir"]) / p)
        else:
            raise ConfigError(f"rlwk config needs 'instance' (one of {sorted(INSTANCES)}) or 'path'")
        K, delta = int(cfg["K"]), float(cfg.get("delta", 0.1))
    except ConfigError:
        raise
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build rlwk run: {exc!r}") from exc
    from .rlwk import aug_to_dict
    seeds = parse_seeds(args.seeds, cfg)
    out = Path(args.out or cfg.get("out", "results"))
    out.mkdir(parents=True, exist_ok=True)
    doc = aug_to_dict(aug)
    recs = parallel_map(_rlwk_one, [(doc, K, delta, s) for s in seeds])
    s1, b1 = aug.base.initial_index, aug.full_budget
    final = []
    for seed, rec in zip(seeds, recs):
        rows = ((k + 1, rec.k_regret[k], rec.cum_regret[k], int(rec.terminated_early[k]),
                 ";".join(str(v) for v in rec.max_cost_used[k])) for k in range(K))
        write_csv(out / f"rlwk_seed{seed}.csv",
                  ["episode", "k_regret", "cum_regret", "terminated", "cost_units_continuing"], rows)
        final.append((seed, rec.cum_regret[-1], int(rec.final_policy[0, s1, b1])))
    write_csv(out / "rlwk_summary.csv", ["seed", "cum_regret", "first_action"], final)
    print(f"wrote {len(seeds) + 1} files to {out}")
    return EXIT_OK


def cmd_counts(args) -> int:
    cfg = read_config(args.config)
    spec = spec_from_config(cfg)
    seed = parse_seeds(args.seeds, cfg)[0]
    alg = cfg.get("algorithms", ["bf"])[0]
    if alg == "flat-ch":
        raise ConfigError("counts dump is defined for the factored learners only")
    K = int(cfg.get("K", 1))
    from .agents import RUNNERS
    rec = RUNNERS[alg](spec, RunConfig(K=K, delta=float(cfg.get("delta", 0.1)), seed=seed, algorithm=alg))
    est: Estimators = rec.estimators
    out = Path(args.out or cfg.get("out", "results"))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"counts_{alg}_seed{seed}.csv"
    write_csv(path, ["scope_id", "cell_index", "count"], counts_rows(est))
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run, "gen": cmd_gen, "verify": cmd_verify, "check-variance": cmd_check_variance,
    "rlwk": cmd_rlwk, "counts": cmd_counts,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factored-rl", description="Factored MDP learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seeds", help="comma-separated seed list, overrides the config")
        p.add_argument("--out", help="output directory (file for gen)")
        p.add_argument("--trials", type=int, default=1000, help="decomposition-lemma trials")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
