"""Seeded episodic simulator and benchmark generators."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    FactorDims,
    FmdpSpec,
    RewardFactor,
    Scope,
    TransitionFactor,
    decode_index,
    encode_index,
    validate_spec,
)
from .rng import ENV_STREAM, episode_uniforms, sample_categorical


class ConfigurationError(ValueError):
    pass


@dataclass
class Trajectory:
    """One episode.  Row ``t`` of each array is the step-``t`` record.

    ``states``/``next_states`` hold state factor vectors, ``actions`` action
    factor vectors and ``rewards`` the per-factor samples r_{t,i}.  The flat
    indices are kept alongside because the learners work on them.
    """

    initial_state: tuple
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    s_idx: np.ndarray
    a_idx: np.ndarray
    next_idx: np.ndarray

    def __len__(self):
        return len(self.s_idx)

    @property
    def step_rewards(self) -> np.ndarray:
        return self.rewards.mean(axis=1)

    @property
    def total_reward(self) -> float:
        return float(self.step_rewards.sum())

    @property
    def steps(self):
        for t in range(len(self)):
            yield {
                "state": tuple(self.states[t]),
                "action": tuple(self.actions[t]),
                "reward_samples": tuple(self.rewards[t]),
                "next_state": tuple(self.next_states[t]),
            }

    @classmethod
    def empty(cls, n: int, n_actions: int, m: int, initial_state=()):
        z = np.zeros(0, dtype=np.int64)
        return cls(tuple(initial_state), np.zeros((0, n), dtype=np.int64),
                   np.zeros((0, n_actions), dtype=np.int64), np.zeros((0, m)),
                   np.zeros((0, n), dtype=np.int64), z, z.copy(), z.copy())


class Simulator:
    """Precomputed lookup tables for fast repeated episodes on one spec."""

    def __init__(self, spec: FmdpSpec):
        self.spec = spec
        dims = spec.dims
        self.dims = dims
        self.S, self.A, self.H = dims.S, dims.A, spec.horizon
        self.state_vectors = np.array(
            [decode_index(s, dims.state_dims) for s in range(self.S)], dtype=np.int64
        ).reshape(self.S, dims.n)
        if dims.action_dims:
            self.action_vectors = np.array(
                [decode_index(a, dims.action_dims) for a in range(self.A)], dtype=np.int64
            ).reshape(self.A, len(dims.action_dims))
        else:
            self.action_vectors = np.zeros((1, 0), dtype=np.int64)
        self.t_cells = [dims.scope_cells(t.scope) for t in spec.transitions]
        self.t_cdfs = [np.cumsum(t.rows, axis=1) for t in spec.transitions]
        self.r_cells = [dims.scope_cells(r.scope) for r in spec.rewards]
        self.radix = np.array(
            [int(np.prod(dims.state_dims[j + 1:], dtype=np.int64)) for j in range(dims.n)],
            dtype=np.int64,
        )

    def step(self, s: int, a: int, u_row: np.ndarray, reward_out: np.ndarray) -> int:
        """One transition from flat (s, a); ``u_row`` holds n state then m reward uniforms."""
        n = self.dims.n
        x = s * self.A + a
        for i, r in enumerate(self.spec.rewards):
            c = self.r_cells[i][x]
            mu = r.means[c]
            reward_out[i] = (1.0 if u_row[n + i] < mu else 0.0) if r.bernoulli[c] else mu
        s_next = 0
        for j in range(n):
            c = self.t_cells[j][x]
            s_next += sample_categorical(self.t_cdfs[j][c], u_row[j]) * self.radix[j]
        return int(s_next)

    def run(self, policy: np.ndarray, initial_state, seed: int, episode: int = 0) -> Trajectory:
        spec, H = self.spec, self.H
        n, m = spec.n, spec.m
        policy = np.asarray(policy)
        if policy.shape != (H, self.S):
            raise ConfigurationError(f"policy shape {policy.shape} != {(H, self.S)}")
        u = episode_uniforms(seed, episode, (H, n + m), ENV_STREAM)
        s = encode_index(initial_state, self.dims.state_dims)
        s_idx = np.empty(H, dtype=np.int64)
        a_idx = np.empty(H, dtype=np.int64)
        nxt = np.empty(H, dtype=np.int64)
        rewards = np.empty((H, m))
        for h in range(H):
            a = int(policy[h, s])
            if not 0 <= a < self.A:
                raise ConfigurationError(f"policy gives action {a} at step {h}, state {s}")
            s_next = self.step(s, a, u[h], rewards[h])
            s_idx[h], a_idx[h], nxt[h] = s, a, s_next
            s = int(s_next)
        return Trajectory(
            tuple(int(v) for v in initial_state),
            self.state_vectors[s_idx], self.action_vectors[a_idx], rewards,
            self.state_vectors[nxt], s_idx, a_idx, nxt,
        )


def run_episode(spec: FmdpSpec, policy, initial_state, seed: int, episode: int = 0) -> Trajectory:
    """Simulate one episode of ``policy`` (an (H, S) table of flat actions)."""
    return Simulator(spec).run(policy, initial_state, seed, episode)


# --- generators --------------------------------------------------------------

def _check(spec: FmdpSpec) -> FmdpSpec:
    problems = validate_spec(spec)
    if problems:
        raise ValueError("generated spec is invalid: " + "; ".join(problems))
    return spec


def gen_random_fmdp(dims, scopes, horizon: int, seed: int, initial_state=()) -> FmdpSpec:
    """Random spec: Dirichlet(1) rows and Bernoulli means uniform on [0, 1].

    ``dims`` is ``(state_dims, action_dims)`` and ``scopes`` is
    ``(reward_scopes, transition_scopes)``.
    """
    state_dims, action_dims = dims
    fd = FactorDims(tuple(state_dims), tuple(action_dims))
    reward_scopes, transition_scopes = scopes
    if len(transition_scopes) != fd.n:
        raise ValueError(f"need {fd.n} transition scopes, got {len(transition_scopes)}")
    for sc in list(reward_scopes) + list(transition_scopes):
        if any(not 0 <= z < fd.d for z in sc):
            raise ValueError(f"scope {sc} out of range for {fd.d} factors")
    rng = np.random.default_rng(seed)
    rewards = []
    for sc in reward_scopes:
        scope = Scope(tuple(sc))
        card = fd.scope_card(scope)
        rewards.append(RewardFactor(scope, rng.uniform(0.0, 1.0, card), np.ones(card, dtype=bool)))
    transitions = []
    for j, sc in enumerate(transition_scopes):
        scope = Scope(tuple(sc))
        card = fd.scope_card(scope)
        transitions.append(TransitionFactor(scope, rng.dirichlet(np.ones(fd.state_dims[j]), size=card)))
    return _check(FmdpSpec(fd, int(horizon), tuple(rewards), tuple(transitions), tuple(initial_state)))


def production_line_scopes(d: int) -> list[tuple[int, ...]]:
    """Neighbour scopes of a line of ``d`` machines; index ``d`` is the action."""
    scopes = []
    for i in range(d):
        lo, hi = max(0, i - 1), min(d - 1, i + 1)
        scopes.append(tuple(range(lo, hi + 1)) + (d,))
    return scopes


def gen_production_line(d: int, per_machine_states: int, actions: int, seed: int, horizon: int = 5) -> FmdpSpec:
    """Line of ``d`` machines, each influenced only by its direct neighbours."""
    if d < 2:
        raise ValueError(f"production line needs d >= 2 machines, got {d}")
    scopes = production_line_scopes(d)
    return gen_random_fmdp(((per_machine_states,) * d, (actions,)), (scopes, scopes), horizon, seed)


def gen_tree_bandit_instance(num_factors: int, states_per_factor: int, actions_per_factor: int,
                             gap: float, H: int, best_arms=None) -> FmdpSpec:
    """Independent binary-tree bandits, one per factor.

    Factor states are heap-numbered: level ``l`` (1-based) holds states
    ``2**(l-1) - 1 .. 2**l - 2``; action ``a`` in an internal node moves to
    child ``2k + 1 + a % 2``.  Leaves self-loop and pay Bernoulli(0.5), except
    one leaf-action arm per factor paying Bernoulli(0.5 + gap).  The spare
    state ``states_per_factor - 1`` is unreachable.  ``best_arms[i]`` is a
    ``(leaf_offset, action)`` pair; default is the last leaf with action 0.
    """
    S = int(states_per_factor)
    if S < 2 or S & (S - 1):
        raise ValueError(f"states_per_factor must be a power of two >= 2, got {S}")
    depth = int(math.log2(S))
    if depth > H / 2:
        raise ValueError(f"tree depth {depth} exceeds H/2 = {H / 2}")
    if not 0.0 <= 0.5 + gap <= 1.0:
        raise ValueError(f"gap {gap} puts the best arm outside [0, 1]")
    n, A = int(num_factors), int(actions_per_factor)
    first_leaf, n_leaves = 2 ** (depth - 1) - 1, S // 2
    if best_arms is None:
        best_arms = [(n_leaves - 1, 0)] * n
    fd = FactorDims((S,) * n, (A,) * n)
    rewards, transitions = [], []
    for i in range(n):
        scope = Scope((i, n + i))
        rows = np.zeros((S * A, S))
        means = np.zeros(S * A)
        bern = np.zeros(S * A, dtype=bool)
        for s in range(S):
            is_leaf = first_leaf <= s < first_leaf + n_leaves
            for a in range(A):
                c = s * A + a
                if is_leaf or s == S - 1:
                    rows[c, s] = 1.0
                else:
                    rows[c, 2 * s + 1 + a % 2] = 1.0
                if is_leaf:
                    bern[c] = True
                    means[c] = 0.5
        leaf, act = best_arms[i]
        means[(first_leaf + leaf) * A + act] = 0.5 + gap
        rewards.append(RewardFactor(scope, means, bern))
        transitions.append(TransitionFactor(scope, rows))
    return _check(FmdpSpec(fd, int(H), tuple(rewards), tuple(transitions)))


def gen_parallel_hard_mdps(num_factors: int, states: int, actions: int, epsilon: float, H: int,
                           seed: int) -> FmdpSpec:
    """``num_factors`` independent two-well MDPs, one per state factor.

    In each factor the last state is the rewarding one (deterministic reward
    1 for that factor, so the joint reward is the 1/m average).  From any
    other state every action reaches it with probability ``1/H``, the hidden
    action of that state (drawn from ``seed``) with ``1/H + epsilon``, and
    otherwise stays put.  From the rewarding state the chain falls back to a
    uniformly chosen non-rewarding state with probability ``1/H``.
    """
    if num_factors < 1:
        raise ValueError("num_factors must be >= 1")
    if states < 2:
        raise ValueError("need at least two states per factor")
    base = 1.0 / H
    if not 0.0 <= base + epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} moves a probability outside [0, 1]")
    n, S, A = int(num_factors), int(states), int(actions)
    rng = np.random.default_rng(seed)
    fd = FactorDims((S,) * n, (A,) * n)
    good = S - 1
    rewards, transitions = [], []
    for i in range(n):
        scope = Scope((i, n + i))
        hidden = rng.integers(0, A, size=S - 1)
        rows = np.zeros((S * A, S))
        means = np.zeros(S * A)
        for s in range(S):
            for a in range(A):
                c = s * A + a
                if s == good:
                    rows[c, :good] = base / good
                    rows[c, good] = 1.0 - base
                    means[c] = 1.0
                else:
                    p = base + (epsilon if a == hidden[s] else 0.0)
                    rows[c, good] = p
                    rows[c, s] = 1.0 - p
        rewards.append(RewardFactor(scope, means, np.zeros(S * A, dtype=bool)))
        transitions.append(TransitionFactor(scope, rows))
    return _check(FmdpSpec(fd, int(H), tuple(rewards), tuple(transitions)))
