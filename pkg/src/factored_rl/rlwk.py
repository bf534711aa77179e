"""Episodic RL with knapsack (hard budget) constraints.

Costs and budgets live on a grid of 1/q units, so a remaining budget is a
vector of integers.  The augmented state is ``(s, b)``; a step that starts
with every ``b_i >= 0`` collects its reward, pays ``c`` and continues only if
every ``b_i - c_i >= 0``.  A violated budget carries value 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .environment import Simulator
from .model import FmdpSpec, flat_model, make_spec, spec_from_dict, spec_to_dict
from .planner import (
    InvariantViolation,
    batch_backup,
    batch_nested_variance,
    batch_u_term,
    partial_expectations,
)
from .rng import episode_uniforms

MAX_CONSTRAINTS = 2
MAX_BUDGET_UNITS = 64
GRID_TOL = 1e-9


class DataError(ValueError):
    pass


def to_units(value: float, q: int, what: str = "value") -> int:
    u = value * q
    k = round(u)
    if abs(u - k) > GRID_TOL:
        raise DataError(f"{what} {value} is not a multiple of 1/{q}")
    return int(k)


@dataclass(frozen=True)
class BudgetGrid:
    q: int
    B: tuple

    def __post_init__(self):
        if self.q < 1:
            raise DataError(f"q must be >= 1, got {self.q}")
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        if len(self.B) > MAX_CONSTRAINTS:
            raise DataError(f"at most {MAX_CONSTRAINTS} constraints supported, got {len(self.B)}")
        for b in self.units:
            if b < 0 or b > MAX_BUDGET_UNITS:
                raise DataError(f"budget of {b} units outside [0, {MAX_BUDGET_UNITS}]")

    @property
    def d(self) -> int:
        return len(self.B)

    @property
    def units(self) -> tuple:
        return tuple(to_units(b, self.q, "budget") for b in self.B)

    @property
    def levels(self) -> tuple:
        return tuple(u + 1 for u in self.units)

    @property
    def n_budgets(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64)) if self.d else 1


@dataclass
class CostModel:
    """``probs[i]`` is an (X, C_i) table: law of constraint i's cost in units 0..C_i-1."""

    probs: list

    @property
    def d(self) -> int:
        return len(self.probs)

    @property
    def widths(self) -> tuple:
        return tuple(p.shape[1] for p in self.probs)

    @classmethod
    def from_values(cls, tables, q: int) -> "CostModel":
        """Build from per-constraint lists of ``(values, probs)`` per flat pair."""
        out = []
        for i, table in enumerate(tables):
            cells = [([to_units(v, q, f"cost of constraint {i}") for v in vals], list(ps))
                     for vals, ps in table]
            width = max(max(u) for u, _ in cells) + 1
            if min(min(u) for u, _ in cells) < 0:
                raise DataError(f"negative cost in constraint {i}")
            arr = np.zeros((len(cells), width))
            for x, (units, ps) in enumerate(cells):
                for u, p in zip(units, ps):
                    arr[x, u] += p
            if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-12):
                raise DataError(f"cost probabilities of constraint {i} do not sum to 1")
            out.append(arr)
        return cls(out)

    def to_values(self, q: int):
        tables = []
        for arr in self.probs:
            rows = []
            for row in arr:
                nz = np.flatnonzero(row)
                rows.append({"values": [float(u) / q for u in nz], "probs": row[nz].tolist()})
            tables.append(rows)
        return tables


@dataclass
class AugmentedFmdp:
    """Base MDP plus budget grid and cost model, viewed over (s, b)."""

    base: FmdpSpec
    grid: BudgetGrid
    costs: CostModel
    _next_budget: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.costs.d != self.grid.d:
            raise DataError(f"{self.costs.d} cost tables for {self.grid.d} constraints")
        X = self.base.dims.X
        for i, p in enumerate(self.costs.probs):
            if p.shape[0] != X:
                raise DataError(f"cost table {i} has {p.shape[0]} rows, expected {X}")
        self._next_budget = self._build_next_budget()

    @property
    def S(self) -> int:
        return self.base.dims.S

    @property
    def A(self) -> int:
        return self.base.dims.A

    @property
    def H(self) -> int:
        return self.base.horizon

    @property
    def n_states(self) -> int:
        return self.S * self.grid.n_budgets

    def budget_index(self, units) -> int:
        return int(np.ravel_multi_index(tuple(int(u) for u in units), self.grid.levels)) if self.grid.d else 0

    def budget_units(self, idx: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(idx, self.grid.levels)) if self.grid.d else ()

    @property
    def full_budget(self) -> int:
        return self.budget_index(self.grid.units)

    def _build_next_budget(self) -> np.ndarray:
        """(n_budgets, prod widths) next budget index, -1 when any coordinate goes negative."""
        nb = self.grid.n_budgets
        widths = self.costs.widths
        ncost = int(np.prod(widths, dtype=np.int64)) if widths else 1
        out = np.empty((nb, ncost), dtype=np.int64)
        for b in range(nb):
            bu = np.array(self.budget_units(b), dtype=np.int64)
            for c in range(ncost):
                cu = np.array(np.unravel_index(c, widths), dtype=np.int64) if widths else np.zeros(0, dtype=np.int64)
                nxt = bu - cu
                out[b, c] = -1 if np.any(nxt < 0) else self.budget_index(nxt)
        return out

    def value_tensor(self, V: np.ndarray) -> np.ndarray:
        """(n_budgets, S, C_1..C_d) tensor of V(s', b - c), zero when violated."""
        nb = self.grid.n_budgets
        pad = np.concatenate([V, np.zeros((self.S, 1))], axis=1)
        nxt = np.where(self._next_budget < 0, nb, self._next_budget)
        T = pad[:, nxt]
        return np.moveaxis(T, 1, 0).reshape((nb, self.S) + self.costs.widths)


def build_augmented(base: FmdpSpec, grid: BudgetGrid, costs: CostModel) -> AugmentedFmdp:
    return AugmentedFmdp(base, grid, costs)


@dataclass
class StepResult:
    next_state: int
    budget: tuple
    reward: float
    terminated: bool


def rlwk_step_semantics(state, action, sampled_cost, sampled_reward, budget) -> StepResult:
    """Pure step rule on grid units: collect reward, pay cost, stop on a negative budget."""
    b = tuple(int(v) for v in budget)
    if any(v < 0 for v in b):
        raise InvariantViolation("step taken with a violated budget")
    nb = tuple(v - int(c) for v, c in zip(b, sampled_cost))
    return StepResult(int(state), nb, float(sampled_reward), any(v < 0 for v in nb))


# --- exact dynamic programming ---------------------------------------------------

@dataclass
class AugValues:
    V: np.ndarray
    Q: np.ndarray
    pi: np.ndarray


def _aug_backup(aug: AugmentedFmdp, rows_S, rows_C, V_next) -> np.ndarray:
    """(X, n_budgets) of E[V(s', b - c)] for given per-pair rows."""
    X, nb = rows_S.shape[0], aug.grid.n_budgets
    if aug.grid.d == 0:
        # same arithmetic as the unconstrained oracle, so d=0 reproduces it exactly
        return (rows_S.reshape(aug.S, aug.A, aug.S) @ V_next[:, 0]).reshape(X, 1)
    T = aug.value_tensor(V_next)
    rows = [np.repeat(rows_S, nb, axis=0)] + [np.repeat(r, nb, axis=0) for r in rows_C]
    Vt = np.tile(T, (X,) + (1,) * (T.ndim - 1))
    return batch_backup(rows, Vt).reshape(X, nb)


def exact_augmented_dp(aug: AugmentedFmdp) -> AugValues:
    R, P = flat_model(aug.base)
    S, A, H, nb = aug.S, aug.A, aug.H, aug.grid.n_budgets
    rows_S = P.reshape(S * A, S)
    V = np.zeros((H + 1, S, nb))
    Q = np.empty((H, S, nb, A))
    pi = np.empty((H, S, nb), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        back = _aug_backup(aug, rows_S, aug.costs.probs, V[h + 1])
        Q[h] = np.moveaxis((R.reshape(-1, 1) + back).reshape(S, A, nb), 1, 2)
        pi[h] = np.argmax(Q[h], axis=2)
        V[h] = np.take_along_axis(Q[h], pi[h][..., None], axis=2)[..., 0]
    return AugValues(V, Q, pi)


def evaluate_augmented_policy(aug: AugmentedFmdp, policy) -> np.ndarray:
    R, P = flat_model(aug.base)
    S, A, H, nb = aug.S, aug.A, aug.H, aug.grid.n_budgets
    rows_S = P.reshape(S * A, S)
    back_cache = None
    V = np.zeros((H + 1, S, nb))
    si, bi = np.meshgrid(np.arange(S), np.arange(nb), indexing="ij")
    for h in range(H - 1, -1, -1):
        back_cache = _aug_backup(aug, rows_S, aug.costs.probs, V[h + 1]).reshape(S, A, nb)
        a = policy[h]
        V[h] = R[si, a] + back_cache[si, a, bi]
    return V


# --- learner ---------------------------------------------------------------------

def rlwk_log_factors(aug: AugmentedFmdp, K: int) -> tuple[float, float]:
    """(reward log factor, transition log factor) for the budgeted learner."""
    S, A, T, d = aug.S, aug.A, K * aug.H, aug.grid.d
    L_R = math.log(2 * S * A * T)
    L = math.log(2 * max(d, 1) * S * A * T) + sum(math.log(max(u, 1)) for u in aug.grid.units)
    return L_R, L


def rlwk_eta(H, L, N, widths) -> np.ndarray:
    """(d+1, cells) higher-order bonus part for each of the d+1 next-step factors."""
    N = np.asarray(N, dtype=float)
    inner = sum((4.0 * k * L / N) ** 0.25 + np.sqrt(4.0 * k * L / (3.0 * N)) for k in widths)
    phis = [np.sqrt(4.0 * k * L / N) + 4.0 * k * L / (3.0 * N) for k in widths]
    total = sum(phis)
    return np.stack([np.sqrt(32.0 * H * H * L / N) * inner + H * p * total for p in phis])


class RlwkEstimators:
    """Counts keyed by (s, a): rewards, next states and each constraint's cost."""

    def __init__(self, aug: AugmentedFmdp):
        X = aug.base.dims.X
        self.N = np.zeros(X, dtype=np.int64)
        self.sum_r = np.zeros(X)
        self.sum_r2 = np.zeros(X)
        self.joint_S = np.zeros((X, aug.S), dtype=np.int64)
        self.joint_C = [np.zeros((X, w), dtype=np.int64) for w in aug.costs.widths]

    def add(self, x: int, r: float, s_next: int, cost_units) -> None:
        self.N[x] += 1
        self.sum_r[x] += r
        self.sum_r2[x] += r * r
        self.joint_S[x, s_next] += 1
        for i, c in enumerate(cost_units):
            self.joint_C[i][x, c] += 1

    def snapshot(self):
        n = np.maximum(self.N, 1)
        mean = np.where(self.N > 0, self.sum_r / n, 1.0)
        var = np.where(self.N > 0, np.maximum(0.0, self.sum_r2 / n - (self.sum_r / n) ** 2), 0.0)
        rows_S = self.joint_S / n[:, None]
        rows_C = [j / n[:, None] for j in self.joint_C]
        return mean, var, rows_S, rows_C


@dataclass
class RlwkTables:
    V_bar: np.ndarray
    V_under: np.ndarray
    Q_bar: np.ndarray
    policy: np.ndarray


def sweep_rlwk(aug: AugmentedFmdp, est: RlwkEstimators, K: int, bonus_scale: float = 1.0) -> RlwkTables:
    S, A, H, nb = aug.S, aug.A, aug.H, aug.grid.n_budgets
    X = S * A
    mean, var, rows_S, rows_C = est.snapshot()
    known = est.N > 0
    idx = np.flatnonzero(known)
    L_R, L = rlwk_log_factors(aug, K)
    widths = (S,) + aug.costs.widths
    Vb = np.zeros((H + 1, S, nb))
    Vu = np.zeros((H + 1, S, nb))
    Q = np.full((H, S, nb, A), float(H))
    pol = np.empty((H, S, nb), dtype=np.int64)
    if len(idx):
        N = est.N[idx].astype(float)
        cb_static = (np.sqrt(2.0 * var[idx] * L_R / N) + 8.0 * L_R / (3.0 * N)
                     + rlwk_eta(H, L, N, widths).sum(axis=0))
        coef_sig = np.repeat(4.0 * L / N, nb)[:, None]
        coef_u = np.repeat(2.0 * L / N, nb)[:, None]
        rows = [np.repeat(rows_S[idx], nb, axis=0)] + [np.repeat(r[idx], nb, axis=0) for r in rows_C]
        R_rep = np.repeat(mean[idx], nb)
        cb_rep_static = np.repeat(cb_static, nb)
    for h in range(H - 1, -1, -1):
        cb = np.zeros((X, nb))
        if len(idx):
            Tb = aug.value_tensor(Vb[h + 1])
            Tu = aug.value_tensor(Vu[h + 1])
            reps = (len(idx),) + (1,) * (Tb.ndim - 1)
            Tb_all, Tu_all = np.tile(Tb, reps), np.tile(Tu, reps)
            W = partial_expectations(rows, Tb_all)
            sig = batch_nested_variance(rows, Tb_all, W)
            u = batch_u_term(rows, np.maximum(Tb_all - Tu_all, 0.0))
            cbk = bonus_scale * (cb_rep_static + np.sqrt(coef_sig * sig).sum(axis=1)
                                 + np.sqrt(coef_u * u).sum(axis=1))
            cb[idx] = cbk.reshape(len(idx), nb)
            q = np.full((X, nb), float(H))
            q[idx] = np.minimum(H, R_rep + cbk + W[0]).reshape(len(idx), nb)
            lower_back = np.zeros((X, nb))
            lower_back[idx] = batch_backup(rows, Tu_all).reshape(len(idx), nb)
            Q[h] = np.moveaxis(q.reshape(S, A, nb), 1, 2)
        pol[h] = np.argmax(Q[h], axis=2)
        Vb[h] = np.take_along_axis(Q[h], pol[h][..., None], axis=2)[..., 0]
        if len(idx):
            si, bi = np.meshgrid(np.arange(S), np.arange(nb), indexing="ij")
            x = si * A + pol[h]
            lower = np.maximum(0.0, mean[x] - cb[x, bi] + lower_back[x, bi])
            Vu[h] = np.where(known[x], lower, 0.0)
    return RlwkTables(Vb, Vu, Q, pol)


@dataclass
class RlwkRunRecord:
    seed: int
    k_regret: list = field(default_factory=list)
    cum_regret: list = field(default_factory=list)
    max_cost_used: list = field(default_factory=list)
    terminated_early: list = field(default_factory=list)
    final_policy: np.ndarray | None = None


class RlwkEnv:
    """Simulator for the budgeted episode; draws come from the per-episode uniform block."""

    def __init__(self, aug: AugmentedFmdp):
        self.aug = aug
        self.sim = Simulator(aug.base)
        self.cost_cdfs = [np.cumsum(p, axis=1) for p in aug.costs.probs]

    def run(self, policy, seed: int, episode: int, on_step=None):
        aug = self.aug
        base = aug.base
        n, m, d, H = base.n, base.m, aug.grid.d, aug.H
        u = episode_uniforms(seed, episode, (H, n + m + d))
        s = base.initial_index
        b = aug.grid.units
        spent_continuing = np.zeros(d, dtype=np.int64)
        rewards = np.empty(m)
        total = 0.0
        terminated = False
        for h in range(H):
            if any(v < 0 for v in b):
                raise InvariantViolation("step attempted with a violated budget")
            a = int(policy[h, s, aug.budget_index(b)])
            x = s * aug.A + a
            s_next = self.sim.step(s, a, u[h], rewards)
            cost = tuple(
                min(int(np.searchsorted(cdf[x], u[h, n + m + i], side="right")), cdf.shape[1] - 1)
                for i, cdf in enumerate(self.cost_cdfs)
            )
            r = float(rewards.mean())
            step = rlwk_step_semantics(s_next, a, cost, r, b)
            total += step.reward
            if on_step is not None:
                on_step(x, r, s_next, cost)
            if step.terminated:
                terminated = True
                break
            spent_continuing += np.array(cost, dtype=np.int64)
            if np.any(spent_continuing > np.array(aug.grid.units)):
                raise InvariantViolation("cumulative cost of a continuing episode exceeds the budget")
            s, b = s_next, step.budget
        return total, spent_continuing, terminated


def run_rlwk_bf(aug: AugmentedFmdp, K: int, delta: float = 0.1, seed: int = 0,
                bonus_scale: float = 1.0) -> RlwkRunRecord:
    """Budget-aware optimistic learner on the augmented model.

    ``delta`` only enters the guarantee, not the bonus, whose log factors carry
    no explicit confidence term.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    exact = exact_augmented_dp(aug)
    s1, b1 = aug.base.initial_index, aug.full_budget
    v_star = exact.V[0, s1, b1]
    env = RlwkEnv(aug)
    est = RlwkEstimators(aug)
    rec = RlwkRunRecord(seed)
    cum = 0.0
    for k in range(K):
        tables = sweep_rlwk(aug, est, K, bonus_scale)
        pol = tables.policy
        steps = []
        _, spent, term = env.run(pol, seed, k, on_step=lambda *a: steps.append(a))
        for x, r, s_next, cost in steps:
            est.add(x, r, s_next, cost)
        regret = float(v_star - evaluate_augmented_policy(aug, pol)[0, s1, b1])
        if regret < -1e-9:
            raise InvariantViolation(f"negative regret {regret} at episode {k + 1}")
        cum += max(regret, 0.0)
        rec.k_regret.append(max(regret, 0.0))
        rec.cum_regret.append(cum)
        rec.max_cost_used.append(tuple(int(v) for v in spent))
        rec.terminated_early.append(term)
    rec.final_policy = pol
    return rec


# --- serialization and the two illustrative instances -------------------------------

def aug_to_dict(aug: AugmentedFmdp) -> dict:
    return {"base": spec_to_dict(aug.base), "q": aug.grid.q, "budget": list(aug.grid.B),
            "costs": aug.costs.to_values(aug.grid.q)}


def aug_from_dict(doc: dict) -> AugmentedFmdp:
    base = spec_from_dict(doc["base"])
    q = int(doc["q"])
    grid = BudgetGrid(q, tuple(doc["budget"]))
    tables = [[(c["values"], c["probs"]) for c in table] for table in doc["costs"]]
    return AugmentedFmdp(base, grid, CostModel.from_values(tables, q))


def load_augmented(path) -> AugmentedFmdp:
    with open(path, encoding="utf-8") as fh:
        return aug_from_dict(json.load(fh))


def _line_instance(H, moves, rewards, costs, q, budget):
    """Flat 5-state, 2-action base MDP from per-(s, a) next state, reward and cost law."""
    S, A = 5, 2
    rows = np.zeros((S * A, S))
    means = np.zeros(S * A)
    cost_table = []
    for s in range(S):
        for a in range(A):
            x = s * A + a
            rows[x, moves.get((s, a), s)] = 1.0
            means[x] = rewards.get((s, a), 0.0)
            cost_table.append(costs.get((s, a), ([0.0], [1.0])))
    base = make_spec((S,), (A,), H, [((0, 1), means, np.zeros(S * A, dtype=bool))],
                     [((0, 1), rows)], (0,))
    return AugmentedFmdp(base, BudgetGrid(q, (budget,)), CostModel.from_values([cost_table], q))


def fig1_instance1() -> AugmentedFmdp:
    """Start s0; action 0 costs 0.5 and leads to s1 (reward 0.5 on leaving),
    action 1 costs 0 or 1 evenly and leads to s2 (reward 0.8 on leaving).
    s3 and s4 are absorbing with no reward.  H = 2, budget 0.5."""
    moves = {(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 3, (2, 0): 4, (2, 1): 4}
    rewards = {(1, 0): 0.5, (1, 1): 0.5, (2, 0): 0.8, (2, 1): 0.8}
    costs = {(0, 0): ([0.5], [1.0]), (0, 1): ([0.0, 1.0], [0.5, 0.5])}
    return _line_instance(2, moves, rewards, costs, 2, 0.5)


def fig1_instance2() -> AugmentedFmdp:
    """Start s0 where both actions cost 0 or 1 evenly and lead to s1.  In s1,
    action 0 costs 0 and leads to s2 (reward 0.5 on leaving), action 1 costs
    0.5 and leads to s3 (reward 1 on leaving).  s4 absorbs.  H = 3, budget 0.5."""
    moves = {(0, 0): 1, (0, 1): 1, (1, 0): 2, (1, 1): 3,
             (2, 0): 4, (2, 1): 4, (3, 0): 4, (3, 1): 4}
    rewards = {(2, 0): 0.5, (2, 1): 0.5, (3, 0): 1.0, (3, 1): 1.0}
    coin = ([0.0, 1.0], [0.5, 0.5])
    costs = {(0, 0): coin, (0, 1): coin, (1, 1): ([0.5], [1.0])}
    return _line_instance(3, moves, rewards, costs, 2, 0.5)


INSTANCES = {"fig1-instance1": fig1_instance1, "fig1-instance2": fig1_instance2}


def load_instance(name: str) -> AugmentedFmdp:
    """Load a shipped instance fixture by name."""
    if name not in INSTANCES:
        raise DataError(f"unknown instance {name!r}; known: {sorted(INSTANCES)}")
    text = resources.files("factored_rl").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return aug_from_dict(json.loads(text))
