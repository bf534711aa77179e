"""Factored state/action spaces, scope projection and the FmdpSpec container.

A joint factor vector lists the ``n`` state factors first, followed by the
action factors.  Flat indices use mixed radix with the last factor varying
fastest, which matches numpy's C order for ``np.ravel_multi_index``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BERNOULLI = "bernoulli"
DETERMINISTIC = "deterministic"
ROW_TOL = 1e-12


class DimensionError(ValueError):
    """A factor value or flat index lies outside its dimension."""


def encode_index(factors: Sequence[int], dims: Sequence[int]) -> int:
    if len(factors) != len(dims):
        raise DimensionError(f"expected {len(dims)} factors, got {len(factors)}")
    value = 0
    for i, (f, d) in enumerate(zip(factors, dims)):
        if not 0 <= f < d:
            raise DimensionError(f"factor {i} = {f} outside [0, {d})")
        value = value * d + int(f)
    return value


def decode_index(idx: int, dims: Sequence[int]) -> list[int]:
    total = int(np.prod(dims, dtype=np.int64)) if len(dims) else 1
    if not 0 <= idx < total:
        raise DimensionError(f"index {idx} outside [0, {total})")
    out = []
    for d in reversed(dims):
        idx, r = divmod(int(idx), d)
        out.append(r)
    return out[::-1]


@dataclass(frozen=True)
class Scope:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"scope indices must be strictly increasing: {idx}")
        if any(i < 0 for i in idx):
            raise ValueError(f"negative scope index in {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def project_scope(factors: Sequence[int], scope: Scope | Sequence[int]) -> list[int]:
    """Components of ``factors`` at the scope's indices, in scope order."""
    return [factors[i] for i in scope]


@dataclass(frozen=True)
class FactorDims:
    state_dims: tuple[int, ...]
    action_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "state_dims", tuple(int(d) for d in self.state_dims))
        object.__setattr__(self, "action_dims", tuple(int(d) for d in self.action_dims))
        if any(d < 1 for d in self.state_dims + self.action_dims):
            raise ValueError("every factor dimension must be >= 1")

    @property
    def all_dims(self) -> tuple[int, ...]:
        return self.state_dims + self.action_dims

    @property
    def n(self) -> int:
        return len(self.state_dims)

    @property
    def d(self) -> int:
        return len(self.state_dims) + len(self.action_dims)

    @property
    def S(self) -> int:
        return int(np.prod(self.state_dims, dtype=np.int64))

    @property
    def A(self) -> int:
        return int(np.prod(self.action_dims, dtype=np.int64)) if self.action_dims else 1

    @property
    def X(self) -> int:
        return self.S * self.A

    def scope_dims(self, scope: Scope) -> tuple[int, ...]:
        return tuple(self.all_dims[i] for i in scope)

    def scope_card(self, scope: Scope) -> int:
        return int(np.prod(self.scope_dims(scope), dtype=np.int64))

    def scope_cells(self, scope: Scope) -> np.ndarray:
        """Scope cell of every flat (s, a) pair, as an int array of length X."""
        grids = np.indices(self.all_dims).reshape(self.d, -1)
        sub = grids[list(scope.indices)]
        if len(scope) == 0:
            return np.zeros(self.X, dtype=np.int64)
        return np.ravel_multi_index(tuple(sub), self.scope_dims(scope)).astype(np.int64)


@dataclass(frozen=True)
class RewardFactor:
    """Reward component on one scope: per-cell mean and distribution kind.

    ``bernoulli[c]`` is True for a Bernoulli(mean) cell, False for a
    deterministic reward equal to ``means[c]``.
    """

    scope: Scope
    means: np.ndarray
    bernoulli: np.ndarray

    def variances(self) -> np.ndarray:
        return np.where(self.bernoulli, self.means * (1.0 - self.means), 0.0)


@dataclass(frozen=True)
class TransitionFactor:
    """Transition of one state factor: ``rows[c]`` is a distribution over S_j."""

    scope: Scope
    rows: np.ndarray


@dataclass(frozen=True)
class FmdpSpec:
    dims: FactorDims
    horizon: int
    rewards: tuple[RewardFactor, ...]
    transitions: tuple[TransitionFactor, ...]
    initial_state: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(self.rewards))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.initial_state:
            object.__setattr__(self, "initial_state", (0,) * self.dims.n)
        else:
            object.__setattr__(self, "initial_state", tuple(int(v) for v in self.initial_state))

    @property
    def m(self) -> int:
        return len(self.rewards)

    @property
    def n(self) -> int:
        return self.dims.n

    @property
    def initial_index(self) -> int:
        return encode_index(self.initial_state, self.dims.state_dims)


def make_spec(state_dims, action_dims, horizon, rewards, transitions, initial_state=()) -> FmdpSpec:
    """Build an FmdpSpec from plain lists.

    ``rewards`` is a list of ``(scope, means)`` or ``(scope, means, bernoulli)``
    and ``transitions`` a list of ``(scope, rows)``.  Means default to
    Bernoulli cells.
    """
    dims = FactorDims(tuple(state_dims), tuple(action_dims))
    rf = []
    for item in rewards:
        scope, means = item[0], np.asarray(item[1], dtype=float).ravel()
        bern = item[2] if len(item) > 2 else np.ones(means.shape, dtype=bool)
        rf.append(RewardFactor(Scope(tuple(scope)), means, np.broadcast_to(np.asarray(bern, dtype=bool), means.shape).copy()))
    tf = [TransitionFactor(Scope(tuple(sc)), np.atleast_2d(np.asarray(rows, dtype=float))) for sc, rows in transitions]
    return FmdpSpec(dims, int(horizon), tuple(rf), tuple(tf), tuple(initial_state))


def validate_spec(spec: FmdpSpec) -> list[str]:
    """Return a list of violations; an empty list means the spec is valid."""
    problems = []
    dims = spec.dims
    if spec.horizon < 1:
        problems.append(f"horizon {spec.horizon} < 1")
    if spec.m < 1:
        problems.append("need at least one reward factor")
    if len(spec.transitions) != dims.n:
        problems.append(f"{len(spec.transitions)} transition factors for {dims.n} state factors")
    if len(spec.initial_state) != dims.n or any(
        not 0 <= v < d for v, d in zip(spec.initial_state, dims.state_dims)
    ):
        problems.append(f"initial state {spec.initial_state} out of range")

    def scope_ok(kind, i, scope):
        bad = [z for z in scope if z >= dims.d]
        if bad:
            problems.append(f"{kind} {i}: scope index {bad} out of range [0, {dims.d})")
            return False
        return True

    for i, r in enumerate(spec.rewards):
        if not scope_ok("reward", i, r.scope):
            continue
        card = dims.scope_card(r.scope)
        if r.means.shape != (card,) or r.bernoulli.shape != (card,):
            problems.append(f"reward {i}: table size {r.means.size} != {card}")
            continue
        bad = np.flatnonzero(~((r.means >= 0.0) & (r.means <= 1.0)))
        for c in bad:
            problems.append(f"reward {i} cell {c}: mean {r.means[c]} out of [0,1]")

    for j, t in enumerate(spec.transitions):
        if not scope_ok("transition", j, t.scope):
            continue
        card = dims.scope_card(t.scope)
        sj = dims.state_dims[j] if j < dims.n else None
        if t.rows.shape != (card, sj):
            problems.append(f"transition {j}: table shape {t.rows.shape} != ({card}, {sj})")
            continue
        for c, row in enumerate(t.rows):
            if np.any(row < 0) or not np.all(np.isfinite(row)):
                problems.append(f"transition {j} cell {c}: negative or non-finite entry")
            total = row.sum()
            if abs(total - 1.0) > ROW_TOL:
                problems.append(f"transition {j} cell {c}: row sum {total:.12g} != 1")
    return problems


def flat_model(spec: FmdpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Expected reward R[s, a] and the full kernel P[s, a, s'] of a factored spec."""
    dims = spec.dims
    X = dims.X
    R = np.zeros(X)
    for r in spec.rewards:
        R += r.means[dims.scope_cells(r.scope)]
    R /= spec.m
    P = np.ones((X, 1))
    for t in spec.transitions:
        rows = t.rows[dims.scope_cells(t.scope)]
        P = (P[:, :, None] * rows[:, None, :]).reshape(X, -1)
    return R.reshape(dims.S, dims.A), P.reshape(dims.S, dims.A, dims.S)


def flatten_to_flat_mdp(spec: FmdpSpec) -> FmdpSpec:
    """Equivalent spec with one state factor, one action factor and full scopes."""
    R, P = flat_model(spec)
    dims = spec.dims
    full = Scope((0, 1))
    return FmdpSpec(
        FactorDims((dims.S,), (dims.A,)),
        spec.horizon,
        (RewardFactor(full, R.ravel().copy(), np.ones(dims.X, dtype=bool)),),
        (TransitionFactor(full, P.reshape(dims.X, dims.S).copy()),),
        (spec.initial_index,),
    )


# --- JSON serialization ----------------------------------------------------

def spec_to_dict(spec: FmdpSpec) -> dict:
    rewards = []
    for r in spec.rewards:
        table = [
            {BERNOULLI if b else DETERMINISTIC: float(mu)}
            for mu, b in zip(r.means, r.bernoulli)
        ]
        rewards.append({"scope": list(r.scope), "table": table})
    transitions = [{"scope": list(t.scope), "rows": t.rows.tolist()} for t in spec.transitions]
    return {
        "state_dims": list(spec.dims.state_dims),
        "action_dims": list(spec.dims.action_dims),
        "horizon": spec.horizon,
        "initial_state": list(spec.initial_state),
        "rewards": rewards,
        "transitions": transitions,
    }


def spec_from_dict(doc: dict) -> FmdpSpec:
    rewards = []
    for entry in doc["rewards"]:
        means, bern = [], []
        for cell in entry["table"]:
            if isinstance(cell, (int, float)):
                means.append(float(cell))
                bern.append(True)
                continue
            (kind, value), = cell.items()
            if kind not in (BERNOULLI, DETERMINISTIC):
                raise ValueError(f"unknown reward distribution {kind!r}")
            means.append(float(value))
            bern.append(kind == BERNOULLI)
        rewards.append((entry["scope"], means, bern))
    transitions = [(t["scope"], t["rows"]) for t in doc["transitions"]]
    return make_spec(
        doc["state_dims"], doc["action_dims"], doc["horizon"], rewards, transitions,
        doc.get("initial_state", ()),
    )


def dumps_spec(spec: FmdpSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=1)


def loads_spec(text: str) -> FmdpSpec:
    return spec_from_dict(json.loads(text))


def save_spec(spec: FmdpSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_spec(spec))
        fh.write("\n")


def load_spec(path) -> FmdpSpec:
    with open(path, encoding="utf-8") as fh:
        return loads_spec(fh.read())
