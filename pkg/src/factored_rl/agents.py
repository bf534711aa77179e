"""Learning loops: Hoeffding and Bernstein factored learners plus the flat baseline."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .bonuses import LogFactors
from .environment import Simulator, Trajectory
from .estimation import Estimators
from .model import FmdpSpec, flat_model, flatten_to_flat_mdp
from .oracle import evaluate_policy, exact_optimal_values
from .planner import InvariantViolation, sweep_bernstein, sweep_hoeffding

ALGORITHMS = ("ch", "bf", "flat-ch")


@dataclass
class RunConfig:
    K: int
    delta: float = 0.1
    seed: int = 0
    algorithm: str = "bf"
    initial_state: tuple | None = None
    bonus_scale: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    policy_hash: list = field(default_factory=list)
    realized_return: list = field(default_factory=list)
    k_regret: list = field(default_factory=list)
    cum_regret: list = field(default_factory=list)
    optimism: list = field(default_factory=list)
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    bonuses: list = field(default_factory=list)
    estimator_digest: str = ""
    final_policy: np.ndarray | None = None
    estimators: Estimators | None = None

    @property
    def K(self) -> int:
        return len(self.k_regret)

    def csv_rows(self):
        for k in range(self.K):
            yield (k + 1, self.k_regret[k], self.cum_regret[k], int(self.optimism[k]))


def policy_hash(policy: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(policy, dtype=np.int64).tobytes()).hexdigest()[:12]


def _flat_trajectory(traj: Trajectory) -> Trajectory:
    """View a factored trajectory through flat state/action indices and the averaged reward."""
    return Trajectory(
        traj.initial_state, traj.s_idx[:, None], traj.a_idx[:, None], traj.step_rewards[:, None],
        traj.next_idx[:, None], traj.s_idx, traj.a_idx, traj.next_idx,
    )


def _learn(env_spec: FmdpSpec, plan_spec: FmdpSpec, cfg: RunConfig, sweep, flat_obs: bool,
           keep_bonus: bool = False) -> RunRecord:
    H = env_spec.horizon
    init = tuple(cfg.initial_state) if cfg.initial_state is not None else env_spec.initial_state
    env_spec = FmdpSpec(env_spec.dims, H, env_spec.rewards, env_spec.transitions, init)
    model = flat_model(env_spec)
    s1 = env_spec.initial_index
    v_star = exact_optimal_values(env_spec, model).V_star[0, s1]
    sim = Simulator(env_spec)
    dims = plan_spec.dims
    est = Estimators.for_spec(plan_spec)
    logf = LogFactors.for_dims(dims, [r.scope for r in plan_spec.rewards], cfg.K, H, cfg.delta)
    rec = RunRecord(cfg.algorithm, cfg.seed)
    cum = 0.0
    for k in range(cfg.K):
        tables = sweep(dims, est, logf, H, bonus_scale=cfg.bonus_scale)
        tables.check(H)
        pol = tables.policy
        traj = sim.run(pol, init, cfg.seed, episode=k)
        est.update(_flat_trajectory(traj) if flat_obs else traj)
        regret = float(v_star - evaluate_policy(env_spec, pol, model)[0, s1])
        if regret < -1e-9:
            raise InvariantViolation(f"negative regret {regret} at episode {k + 1}")
        regret = max(regret, 0.0)
        cum += regret
        rec.policy_hash.append(policy_hash(pol))
        rec.realized_return.append(traj.total_reward)
        rec.k_regret.append(regret)
        rec.cum_regret.append(cum)
        rec.optimism.append(bool(tables.V_bar[0, s1] >= v_star - 1e-12))
        rec.states.append(tuple(int(v) for v in traj.s_idx))
        rec.actions.append(tuple(int(a) for a in traj.a_idx))
        if keep_bonus:
            b = tables.bonus
            rec.bonuses.append(np.array(b if b.ndim == 1 else b[0]))
    rec.estimator_digest = est.digest()
    rec.final_policy = pol
    rec.estimators = est
    return rec


def run_fmdp_ch(spec: FmdpSpec, cfg: RunConfig, keep_bonus: bool = False) -> RunRecord:
    return _learn(spec, spec, cfg, sweep_hoeffding, False, keep_bonus)


def run_fmdp_bf(spec: FmdpSpec, cfg: RunConfig, keep_bonus: bool = False) -> RunRecord:
    return _learn(spec, spec, cfg, sweep_bernstein, False, keep_bonus)


def run_flat_ucbvi_ch(spec: FmdpSpec, cfg: RunConfig, keep_bonus: bool = False) -> RunRecord:
    """Hoeffding learner on the flattened model, driven by the factored environment."""
    return _learn(spec, flatten_to_flat_mdp(spec), cfg, sweep_hoeffding, True, keep_bonus)


RUNNERS = {"ch": run_fmdp_ch, "bf": run_fmdp_bf, "flat-ch": run_flat_ucbvi_ch}


def run_agent(spec: FmdpSpec, cfg: RunConfig) -> RunRecord:
    return RUNNERS[cfg.algorithm](spec, cfg)
