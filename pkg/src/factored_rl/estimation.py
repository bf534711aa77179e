"""Per-scope visit counters and empirical reward/transition estimates."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .model import FactorDims, FmdpSpec, Scope


class DataError(ValueError):
    """Observed data does not fit the estimator's dimensions."""


class UndefinedEstimateError(ValueError):
    """An estimate was requested for a cell that has no samples."""


@dataclass
class ScopeCounter:
    scope: Scope
    counts: np.ndarray
    joint_counts: np.ndarray | None = None


@dataclass
class RewardEstimator:
    counters: list[ScopeCounter]
    sum_r: list[np.ndarray]
    sum_r2: list[np.ndarray]


@dataclass
class TransitionEstimator:
    counters: list[ScopeCounter]


@dataclass
class Estimators:
    """Reward and transition statistics for one factored model."""

    dims: FactorDims
    rewards: RewardEstimator
    transitions: TransitionEstimator
    _r_cells: list = field(default_factory=list, repr=False)
    _t_cells: list = field(default_factory=list, repr=False)

    @classmethod
    def empty(cls, dims: FactorDims, reward_scopes, transition_scopes) -> "Estimators":
        r_scopes = [s if isinstance(s, Scope) else Scope(tuple(s)) for s in reward_scopes]
        t_scopes = [s if isinstance(s, Scope) else Scope(tuple(s)) for s in transition_scopes]
        if len(t_scopes) != dims.n:
            raise DataError(f"{len(t_scopes)} transition scopes for {dims.n} state factors")
        rc, sr, sr2 = [], [], []
        for sc in r_scopes:
            card = dims.scope_card(sc)
            rc.append(ScopeCounter(sc, np.zeros(card, dtype=np.int64)))
            sr.append(np.zeros(card))
            sr2.append(np.zeros(card))
        tc = []
        for j, sc in enumerate(t_scopes):
            card = dims.scope_card(sc)
            tc.append(ScopeCounter(sc, np.zeros(card, dtype=np.int64),
                                   np.zeros((card, dims.state_dims[j]), dtype=np.int64)))
        return cls(dims, RewardEstimator(rc, sr, sr2), TransitionEstimator(tc),
                   [dims.scope_cells(sc) for sc in r_scopes],
                   [dims.scope_cells(sc) for sc in t_scopes])

    @classmethod
    def for_spec(cls, spec: FmdpSpec) -> "Estimators":
        return cls.empty(spec.dims, [r.scope for r in spec.rewards], [t.scope for t in spec.transitions])

    @property
    def m(self) -> int:
        return len(self.rewards.counters)

    @property
    def n(self) -> int:
        return len(self.transitions.counters)

    def reward_cells(self, i: int) -> np.ndarray:
        """Scope cell of reward factor ``i`` for every flat (s, a)."""
        return self._r_cells[i]

    def transition_cells(self, j: int) -> np.ndarray:
        return self._t_cells[j]

    def update(self, traj) -> "Estimators":
        update_from_episode(self, traj)
        return self

    def copy(self) -> "Estimators":
        r = self.rewards
        return Estimators(
            self.dims,
            RewardEstimator([ScopeCounter(c.scope, c.counts.copy()) for c in r.counters],
                            [a.copy() for a in r.sum_r], [a.copy() for a in r.sum_r2]),
            TransitionEstimator([ScopeCounter(c.scope, c.counts.copy(), c.joint_counts.copy())
                                 for c in self.transitions.counters]),
            self._r_cells, self._t_cells,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for c, a, b in zip(self.rewards.counters, self.rewards.sum_r, self.rewards.sum_r2):
            h.update(c.counts.tobytes())
            h.update(a.tobytes())
            h.update(b.tobytes())
        for c in self.transitions.counters:
            h.update(c.joint_counts.tobytes())
        return h.hexdigest()[:16]


def update_from_episode(est: Estimators, traj) -> Estimators:
    """Accumulate one trajectory's visits, rewards and next-state factors."""
    if len(traj) == 0:
        return est
    dims = est.dims
    rewards = np.asarray(traj.rewards, dtype=float)
    nxt = np.asarray(traj.next_states)
    if rewards.shape != (len(traj), est.m) or nxt.shape != (len(traj), dims.n):
        raise DataError(
            f"trajectory shapes rewards {rewards.shape}, next_states {nxt.shape} "
            f"do not fit m={est.m}, n={dims.n}"
        )
    s, a = np.asarray(traj.s_idx), np.asarray(traj.a_idx)
    if np.any((s < 0) | (s >= dims.S)) or np.any((a < 0) | (a >= dims.A)):
        raise DataError("state or action index out of range")
    x = s * dims.A + a
    for i, c in enumerate(est.rewards.counters):
        cells = est._r_cells[i][x]
        np.add.at(c.counts, cells, 1)
        np.add.at(est.rewards.sum_r[i], cells, rewards[:, i])
        np.add.at(est.rewards.sum_r2[i], cells, rewards[:, i] ** 2)
    for j, c in enumerate(est.transitions.counters):
        if np.any((nxt[:, j] < 0) | (nxt[:, j] >= dims.state_dims[j])):
            raise DataError(f"next-state factor {j} out of range")
        cells = est._t_cells[j][x]
        np.add.at(c.counts, cells, 1)
        np.add.at(c.joint_counts, (cells, nxt[:, j]), 1)
    return est


def reward_mean(est: Estimators, i: int, cell: int) -> float:
    n = est.rewards.counters[i].counts[cell]
    return float(est.rewards.sum_r[i][cell] / n) if n > 0 else 1.0


def reward_variance(est: Estimators, i: int, cell: int) -> float:
    n = est.rewards.counters[i].counts[cell]
    if n == 0:
        raise UndefinedEstimateError(f"reward factor {i} cell {cell} has no samples")
    mean = est.rewards.sum_r[i][cell] / n
    return float(max(0.0, est.rewards.sum_r2[i][cell] / n - mean * mean))


def transition_row(est: Estimators, j: int, cell: int) -> np.ndarray:
    c = est.transitions.counters[j]
    if c.counts[cell] == 0:
        raise UndefinedEstimateError(f"transition factor {j} cell {cell} has no samples")
    return c.joint_counts[cell] / c.counts[cell]


# --- vectorized views used by the planner -------------------------------------

def reward_means_all(est: Estimators) -> np.ndarray:
    """(m, X) table of reward means per flat pair; unvisited cells give 1."""
    out = np.empty((est.m, est.dims.X))
    for i, c in enumerate(est.rewards.counters):
        n = c.counts
        mean = np.where(n > 0, est.rewards.sum_r[i] / np.maximum(n, 1), 1.0)
        out[i] = mean[est._r_cells[i]]
    return out


def reward_variances_all(est: Estimators) -> np.ndarray:
    """(m, X) biased empirical variances; 0 where unvisited."""
    out = np.empty((est.m, est.dims.X))
    for i, c in enumerate(est.rewards.counters):
        n = np.maximum(c.counts, 1)
        mean = est.rewards.sum_r[i] / n
        var = np.maximum(0.0, est.rewards.sum_r2[i] / n - mean * mean)
        out[i] = np.where(c.counts > 0, var, 0.0)[est._r_cells[i]]
    return out


def reward_counts_all(est: Estimators) -> np.ndarray:
    return np.stack([c.counts[est._r_cells[i]] for i, c in enumerate(est.rewards.counters)])


def transition_counts_all(est: Estimators) -> np.ndarray:
    return np.stack([c.counts[est._t_cells[j]] for j, c in enumerate(est.transitions.counters)])


def transition_rows_all(est: Estimators) -> list[np.ndarray]:
    """Per factor, an (X, S_j) table of empirical rows; unvisited rows are zero."""
    out = []
    for j, c in enumerate(est.transitions.counters):
        rows = c.joint_counts / np.maximum(c.counts, 1)[:, None]
        out.append(rows[est._t_cells[j]])
    return out


def known_set(est: Estimators) -> np.ndarray:
    """Boolean (X,) mask of pairs whose every transition and reward counter is positive."""
    mask = np.ones(est.dims.X, dtype=bool)
    for j, c in enumerate(est.transitions.counters):
        mask &= c.counts[est._t_cells[j]] > 0
    for i, c in enumerate(est.rewards.counters):
        mask &= c.counts[est._r_cells[i]] > 0
    return mask


def counts_rows(est: Estimators) -> list[tuple[str, int, int]]:
    """(scope_id, cell_index, count) for every counter cell, rewards first."""
    rows = []
    for i, c in enumerate(est.rewards.counters):
        rows += [(f"R{i}", k, int(v)) for k, v in enumerate(c.counts)]
    for j, c in enumerate(est.transitions.counters):
        rows += [(f"P{j}", k, int(v)) for k, v in enumerate(c.counts)]
    return rows
