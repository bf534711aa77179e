"""Optimistic value iteration over a factored empirical model.

The core routines work on a batch of B cells at once: ``rows`` is a list of
``(B, k_j)`` arrays (one per next-state factor, in factor order) and value
tensors have shape ``(B, k_1, ..., k_n)`` or ``(k_1, ..., k_n)``.  Partial
expectations are built back to front, ``W_n = V`` and
``W_{i-1} = sum_{s_i} P_i W_i``, so ``W_0`` is the full backup.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bonuses as B
from .estimation import (
    Estimators,
    known_set,
    reward_counts_all,
    reward_means_all,
    reward_variances_all,
    transition_counts_all,
    transition_rows_all,
)
from .model import DimensionError, FactorDims, FmdpSpec

_CHUNK_ELEMS = 1 << 22


class InvariantViolation(RuntimeError):
    pass


# --- batched prefix-cache core ---------------------------------------------

def _prep(rows, V):
    rows = [np.atleast_2d(np.asarray(r, dtype=float)) for r in rows]
    shape = tuple(r.shape[1] for r in rows)
    Bsz = rows[0].shape[0]
    V = np.asarray(V, dtype=float)
    if V.shape != (Bsz,) + shape:
        if V.size != int(np.prod(shape)):
            raise DimensionError(f"value tensor shape {V.shape} does not match rows {(Bsz,) + shape}")
        V = np.broadcast_to(V.reshape(shape), (Bsz,) + shape)
    return rows, V


def partial_expectations(rows, V) -> list[np.ndarray]:
    """``[W_0, ..., W_n]`` with ``W_i`` of shape ``(B, k_1..k_i)``."""
    rows, V = _prep(rows, V)
    n = len(rows)
    W = [None] * (n + 1)
    W[n] = V
    for i in range(n, 0, -1):
        W[i - 1] = np.einsum("b...k,bk->b...", W[i], rows[i - 1])
    return W


def prefix_probs(rows) -> list[np.ndarray]:
    """``[p_0, ..., p_n]`` with ``p_i`` the joint law of the first i factors."""
    rows = [np.atleast_2d(np.asarray(r, dtype=float)) for r in rows]
    p = [np.ones(rows[0].shape[0])]
    for r in rows:
        prev = p[-1]
        p.append(prev[..., None] * r.reshape((r.shape[0],) + (1,) * (prev.ndim - 1) + (r.shape[1],)))
    return p


def _expect(p, W):
    return (p * W).reshape(W.shape[0], -1).sum(axis=1)


def batch_backup(rows, V) -> np.ndarray:
    return partial_expectations(rows, V)[0]


def batch_nested_variance(rows, V, W=None) -> np.ndarray:
    """(B, n): prefix-averaged variance over factor i of ``W_i``."""
    rows, V = _prep(rows, V)
    if W is None:
        W = partial_expectations(rows, V)
    p = prefix_probs(rows)
    out = np.empty((V.shape[0], len(rows)))
    for i in range(1, len(rows) + 1):
        second = np.einsum("b...k,bk->b...", W[i] ** 2, rows[i - 1])
        out[:, i - 1] = _expect(p[i - 1], np.maximum(second - W[i - 1] ** 2, 0.0))
    return out


def batch_u_term(rows, gap) -> np.ndarray:
    """(B, n): ``E_{prefix <= i}[(partial expectation of the gap)^2]``."""
    W = partial_expectations(rows, gap)
    p = prefix_probs(rows)
    out = np.empty((W[0].shape[0], len(W) - 1))
    for i in range(1, len(W)):
        out[:, i - 1] = _expect(p[i], W[i] ** 2)
    return out


def _chunks(Bsz, width):
    step = max(1, _CHUNK_ELEMS // max(1, width))
    for lo in range(0, Bsz, step):
        yield slice(lo, min(Bsz, lo + step))


# --- single-cell API -----------------------------------------------------------

def _single(rows, V):
    rows = [np.asarray(r, dtype=float).reshape(1, -1) for r in rows]
    shape = tuple(r.shape[1] for r in rows)
    V = np.asarray(V, dtype=float)
    if V.size != int(np.prod(shape)):
        raise DimensionError(f"value vector of length {V.size} for {int(np.prod(shape))} states")
    return rows, V.reshape(shape)


def factored_backup(rows, V) -> float:
    rows, V = _single(rows, V)
    return float(batch_backup(rows, V)[0])


def nested_variance(rows, V) -> list[float]:
    rows, V = _single(rows, V)
    return [float(v) for v in batch_nested_variance(rows, V)[0]]


def u_term(rows, V_bar_next, V_under_next) -> list[float]:
    gap = np.asarray(V_bar_next, dtype=float) - np.asarray(V_under_next, dtype=float)
    if np.any(gap < -1e-12):
        raise InvariantViolation("upper value below lower value")
    rows, gap = _single(rows, np.maximum(gap, 0.0))
    return [float(v) for v in batch_u_term(rows, gap)[0]]


# --- empirical model -----------------------------------------------------------

@dataclass
class EmpiricalModel:
    """Snapshot of the quantities a sweep needs, vectorized over flat pairs.

    ``R_means`` and ``R_var`` are (m, X), ``R_counts`` and ``P_counts`` are
    (m, X) and (n, X), ``rows[j]`` is (X, S_j) and ``known`` a mask over X.
    """

    dims: FactorDims
    R_means: np.ndarray
    R_var: np.ndarray
    R_counts: np.ndarray
    rows: list
    P_counts: np.ndarray
    known: np.ndarray

    @classmethod
    def from_estimators(cls, est: Estimators) -> "EmpiricalModel":
        return cls(est.dims, reward_means_all(est), reward_variances_all(est), reward_counts_all(est),
                   transition_rows_all(est), transition_counts_all(est), known_set(est))

    @classmethod
    def from_spec(cls, spec: FmdpSpec, count: int = 10 ** 12) -> "EmpiricalModel":
        """The true model with every counter set to ``count``."""
        dims = spec.dims
        means = np.stack([r.means[dims.scope_cells(r.scope)] for r in spec.rewards])
        var = np.stack([r.variances()[dims.scope_cells(r.scope)] for r in spec.rewards])
        rows = [t.rows[dims.scope_cells(t.scope)] for t in spec.transitions]
        X = dims.X
        return cls(dims, means, var, np.full((spec.m, X), count), rows,
                   np.full((dims.n, X), count), np.ones(X, dtype=bool))

    @property
    def m(self):
        return self.R_means.shape[0]


def _as_model(obj) -> EmpiricalModel:
    return obj if isinstance(obj, EmpiricalModel) else EmpiricalModel.from_estimators(obj)


@dataclass
class ValueTables:
    V_bar: np.ndarray
    V_under: np.ndarray | None
    Q_bar: np.ndarray
    policy: np.ndarray
    bonus: np.ndarray | None = None

    def check(self, H: float, tol: float = 1e-9) -> None:
        if np.any(self.Q_bar > H + tol):
            raise InvariantViolation("Q above H")
        if self.V_under is not None:
            if np.any(self.V_under < -tol) or np.any(self.V_under > self.V_bar + tol):
                raise InvariantViolation("lower value outside [0, upper value]")


def _backup_all(model: EmpiricalModel, V: np.ndarray) -> np.ndarray:
    shape = model.dims.state_dims
    X = model.dims.X
    out = np.empty(X)
    Vt = V.reshape(shape)
    for sl in _chunks(X, V.size):
        out[sl] = batch_backup([r[sl] for r in model.rows], Vt)
    return out


def _greedy(Q: np.ndarray):
    pol = np.argmax(Q, axis=1)
    return Q[np.arange(Q.shape[0]), pol], pol


def hoeffding_bonus(model: EmpiricalModel, logf: B.LogFactors, H: int) -> np.ndarray:
    """(X,) total bonus; NaN-free, zero outside the known set."""
    known = model.known
    X = model.dims.X
    cb = np.zeros(X)
    if not known.any():
        return cb
    Nr = model.R_counts[:, known]
    Np = model.P_counts[:, known]
    cbr = sum(B.cb_reward_hoeffding(logf.L_R[i], Nr[i]) for i in range(model.m)) / model.m
    phis = [B.phi(S_j, logf.L_P, Np[j]) for j, S_j in enumerate(model.dims.state_dims)]
    cbp = sum(B.cb_transition_hoeffding(H, logf.L_P, Np[j], phis, j) for j in range(model.dims.n))
    cb[known] = cbr + cbp
    return cb


def sweep_hoeffding(dims: FactorDims, estimators, logf: B.LogFactors, H: int, K_set=None,
                    cb_override=None, bonus_scale: float = 1.0) -> ValueTables:
    """Backward sweep of the Hoeffding-bonus optimistic planner."""
    model = _as_model(estimators)
    S, A = dims.S, dims.A
    known = model.known if K_set is None else np.asarray(K_set, dtype=bool)
    model.known = known
    R = model.R_means.mean(axis=0)
    cb = hoeffding_bonus(model, logf, H) if cb_override is None else np.broadcast_to(cb_override, (dims.X,)).astype(float)
    cb = bonus_scale * cb
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A))
    pol = np.empty((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        q = np.minimum(H, R + cb + _backup_all(model, V[h + 1]))
        q[~known] = H
        Q[h] = q.reshape(S, A)
        V[h], pol[h] = _greedy(Q[h])
    return ValueTables(V, None, Q, pol, cb)


class BernsteinStatic:
    """Parts of the Bernstein bonus that depend only on counts, for the known cells."""

    def __init__(self, model: EmpiricalModel, logf: B.LogFactors, H: int):
        known = model.known
        self.idx = np.flatnonzero(known)
        dims = model.dims
        Nr = model.R_counts[:, known]
        Np = model.P_counts[:, known].astype(float)
        self.reward = sum(
            B.cb_reward_bernstein(model.R_var[i, known], logf.L_R[i], Nr[i]) for i in range(model.m)
        ) / model.m if len(self.idx) else np.zeros(0)
        all_N = [Np[j] for j in range(dims.n)]
        self.eta = sum(
            (B.eta(H, logf.L_P, Np[j], dims.state_dims, all_N, j) for j in range(dims.n)),
            np.zeros(len(self.idx)),
        ) if len(self.idx) else np.zeros(0)
        self.sig_coef = 4.0 * logf.L_P / Np if len(self.idx) else np.zeros((dims.n, 0))
        self.u_coef = 2.0 * logf.L_P / Np if len(self.idx) else np.zeros((dims.n, 0))

    def total(self, sig: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Bonus on the known cells given (cells, n) nested variances and u-terms."""
        return (self.reward + self.eta
                + np.sqrt(self.sig_coef.T * sig).sum(axis=1)
                + np.sqrt(self.u_coef.T * u).sum(axis=1))


def _level_terms(model: EmpiricalModel, idx, V_bar_next, V_under_next):
    """Backup of the upper values, nested variances and u-terms on cells ``idx``."""
    dims = model.dims
    shape = dims.state_dims
    Vb = V_bar_next.reshape(shape)
    gap = np.maximum(V_bar_next - V_under_next, 0.0).reshape(shape)
    back = np.empty(len(idx))
    sig = np.empty((len(idx), dims.n))
    u = np.empty((len(idx), dims.n))
    for sl in _chunks(len(idx), V_bar_next.size * (dims.n + 2)):
        rows = [r[idx[sl]] for r in model.rows]
        W = partial_expectations(rows, Vb)
        back[sl] = W[0]
        sig[sl] = batch_nested_variance(rows, Vb, W)
        u[sl] = batch_u_term(rows, gap)
    return back, sig, u


def bernstein_bonus(model: EmpiricalModel, logf: B.LogFactors, H: int, V_bar_next, V_under_next,
                    static: BernsteinStatic | None = None) -> np.ndarray:
    """(X,) Bernstein bonus for one level given next-level value tables."""
    cb = np.zeros(model.dims.X)
    static = static or BernsteinStatic(model, logf, H)
    if len(static.idx):
        _, sig, u = _level_terms(model, static.idx, V_bar_next, V_under_next)
        cb[static.idx] = static.total(sig, u)
    return cb


def sweep_bernstein(dims: FactorDims, estimators, logf: B.LogFactors, H: int, K_set=None,
                    cb_override=None, bonus_scale: float = 1.0) -> ValueTables:
    """Backward sweep producing optimistic and pessimistic tables."""
    model = _as_model(estimators)
    S, A = dims.S, dims.A
    known = model.known if K_set is None else np.asarray(K_set, dtype=bool)
    model.known = known
    R = model.R_means.mean(axis=0)
    static = BernsteinStatic(model, logf, H) if cb_override is None else None
    idx = np.flatnonzero(known)
    Vb = np.zeros((H + 1, S))
    Vu = np.zeros((H + 1, S))
    Q = np.empty((H, S, A))
    pol = np.empty((H, S), dtype=np.int64)
    cbs = np.zeros((H, dims.X))
    rs = np.arange(S)
    for h in range(H - 1, -1, -1):
        q = np.full(dims.X, float(H))
        if len(idx):
            back, sig, u = _level_terms(model, idx, Vb[h + 1], Vu[h + 1])
            if cb_override is None:
                cbs[h, idx] = static.total(sig, u)
            else:
                cbs[h] = np.broadcast_to(np.asarray(cb_override, dtype=float), (dims.X,))
            cbs[h] *= bonus_scale
            q[idx] = np.minimum(H, R[idx] + cbs[h, idx] + back)
        Q[h] = q.reshape(S, A)
        Vb[h], pol[h] = _greedy(Q[h])
        x = rs * A + pol[h]
        kx = known[x]
        Vu[h] = 0.0
        if kx.any():
            xs = x[kx]
            lower_back = batch_backup([r[xs] for r in model.rows], Vu[h + 1].reshape(dims.state_dims))
            Vu[h, kx] = np.maximum(0.0, R[xs] - cbs[h, xs] + lower_back)
    return ValueTables(Vb, Vu, Q, pol, cbs)
