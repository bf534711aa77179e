"""Exact values, policy evaluation and numerical checks on the variance identities."""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .model import FmdpSpec, flat_model
from .planner import batch_nested_variance

MAX_ATOMS = 10 ** 7


class EnumerationTooLarge(ValueError):
    def __init__(self, atoms: int):
        super().__init__(f"enumeration needs {atoms} atoms, limit is {MAX_ATOMS}")
        self.atoms = atoms


@dataclass
class ExactValues:
    V_star: np.ndarray
    Q_star: np.ndarray
    pi_star: np.ndarray


@dataclass
class ChainVariance:
    omega2: np.ndarray
    sigma2_P_h: np.ndarray
    sigma2_R: np.ndarray


def exact_optimal_values(spec: FmdpSpec, model=None) -> ExactValues:
    R, P = flat_model(spec) if model is None else model
    H, S, A = spec.horizon, R.shape[0], R.shape[1]
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A))
    pi = np.empty((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[h] = R + P @ V[h + 1]
        pi[h] = np.argmax(Q[h], axis=1)
        V[h] = Q[h][np.arange(S), pi[h]]
    return ExactValues(V, Q, pi)


def evaluate_policy(spec: FmdpSpec, policy, model=None) -> np.ndarray:
    R, P = flat_model(spec) if model is None else model
    policy = np.asarray(policy)
    H, S = spec.horizon, R.shape[0]
    s = np.arange(S)
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        a = policy[h]
        V[h] = R[s, a] + P[s, a] @ V[h + 1]
    return V


def _policy_cells(spec: FmdpSpec, policy):
    S, A = spec.dims.S, spec.dims.A
    return np.arange(S)[None, :] * A + np.asarray(policy)


def chain_variance_recursive(spec: FmdpSpec, policy) -> ChainVariance:
    """Return-variance tables built from per-factor transition and reward variances."""
    dims = spec.dims
    H, S, m = spec.horizon, dims.S, spec.m
    R, P = flat_model(spec)
    V = evaluate_policy(spec, policy, (R, P))
    X = _policy_cells(spec, policy)
    rows_all = [t.rows[dims.scope_cells(t.scope)] for t in spec.transitions]
    rvar_all = np.stack([r.variances()[dims.scope_cells(r.scope)] for r in spec.rewards], axis=1)
    Pflat = P.reshape(dims.X, S)
    omega2 = np.zeros((H + 1, S))
    sigP = np.zeros((H, S, dims.n))
    sigR = np.zeros((H, S, m))
    for h in range(H - 1, -1, -1):
        x = X[h]
        sigP[h] = batch_nested_variance([r[x] for r in rows_all], V[h + 1].reshape(dims.state_dims))
        sigR[h] = rvar_all[x]
        omega2[h] = Pflat[x] @ omega2[h + 1] + sigP[h].sum(axis=1) + sigR[h].sum(axis=1) / m ** 2
    return ChainVariance(omega2, sigP, sigR)


def _reward_outcomes(spec: FmdpSpec):
    """Per flat pair, the (values, probs) of the averaged step reward."""
    dims = spec.dims
    m = spec.m
    out = []
    cells = [dims.scope_cells(r.scope) for r in spec.rewards]
    for x in range(dims.X):
        vals, probs = np.zeros(1), np.ones(1)
        for r, c in zip(spec.rewards, cells):
            mu = r.means[c[x]]
            if r.bernoulli[c[x]]:
                v, p = np.array([0.0, 1.0]), np.array([1.0 - mu, mu])
            else:
                v, p = np.array([mu]), np.ones(1)
            vals = (vals[:, None] + v[None, :] / m).ravel()
            probs = (probs[:, None] * p[None, :]).ravel()
        out.append((vals, probs))
    return out


def chain_variance_bruteforce(spec: FmdpSpec, policy) -> np.ndarray:
    """E[(J - V)^2] per (h, s) by enumerating every trajectory and reward outcome."""
    dims = spec.dims
    H, S, m = spec.horizon, dims.S, spec.m
    n_bern = sum(int(r.bernoulli.any()) for r in spec.rewards)
    worst = S * (S * 2 ** n_bern) ** H
    if worst > MAX_ATOMS:
        raise EnumerationTooLarge(worst)
    R, P = flat_model(spec)
    Pflat = P.reshape(dims.X, S)
    outcomes = _reward_outcomes(spec)
    X = _policy_cells(spec, policy)
    V = evaluate_policy(spec, policy, (R, P))
    omega2 = np.zeros((H + 1, S))
    for h in range(H):
        for s0 in range(S):
            prob, ret, state = np.ones(1), np.zeros(1), np.array([s0])
            for t in range(h, H):
                new_p, new_r, new_s = [], [], []
                for p, r, s in zip(prob, ret, state):
                    x = X[t, s]
                    vals, vp = outcomes[x]
                    nz = np.flatnonzero(Pflat[x] > 0)
                    pp = p * vp[:, None] * Pflat[x, nz][None, :]
                    new_p.append(pp.ravel())
                    new_r.append(np.repeat(r + vals, len(nz)))
                    new_s.append(np.tile(nz, len(vals)))
                prob, ret, state = np.concatenate(new_p), np.concatenate(new_r), np.concatenate(new_s)
            omega2[h, s0] = float(np.sum(prob * (ret - V[h, s0]) ** 2))
    return omega2


def occupancy(spec: FmdpSpec, policy) -> np.ndarray:
    """(H, S) probability of being in each state at each step from the initial state."""
    R, P = flat_model(spec)
    S = spec.dims.S
    policy = np.asarray(policy)
    w = np.zeros((spec.horizon, S))
    w[0, spec.initial_index] = 1.0
    for h in range(spec.horizon - 1):
        w[h + 1] = w[h] @ P[np.arange(S), policy[h]]
    return w


def total_variance_bound_check(spec: FmdpSpec, policy):
    """Occupancy-weighted per-step variance sum against H^2.

    Returns ``(lhs, bound, ok)``; ``lhs`` also equals the return variance from
    the initial state.
    """
    cv = chain_variance_recursive(spec, policy)
    w = occupancy(spec, policy)
    per_step = cv.sigma2_P_h.sum(axis=2) + cv.sigma2_R.sum(axis=2) / spec.m ** 2
    lhs = float(np.sum(w * per_step))
    bound = float(spec.horizon ** 2)
    return lhs, bound, lhs <= bound + 1e-9


def _product(rows):
    return reduce(lambda acc, r: np.multiply.outer(acc, r), rows[1:], np.asarray(rows[0], dtype=float))


def decomposition_inequality_check(rows_hat, rows_true, V):
    """Check both estimation-error decomposition bounds for one cell.

    Returns ``(lhs, rhs, ok)`` for the value-error bound; ``ok`` also
    requires the L1 bound on the product kernel to hold.
    """
    rows_hat = [np.asarray(r, dtype=float) for r in rows_hat]
    rows_true = [np.asarray(r, dtype=float) for r in rows_true]
    n = len(rows_true)
    V = np.asarray(V, dtype=float).reshape(tuple(len(r) for r in rows_true))
    P_hat, P_true = _product(rows_hat), _product(rows_true)
    deltas = [h - t for h, t in zip(rows_hat, rows_true)]
    l1 = [float(np.abs(d).sum()) for d in deltas]
    ok1 = float(np.abs(P_hat - P_true).sum()) <= sum(l1) + 1e-12
    lhs = abs(float(np.sum((P_hat - P_true) * V)))
    first = 0.0
    for i in range(n):
        mixed = [deltas[i] if j == i else rows_true[j] for j in range(n)]
        first += abs(float(np.sum(_product(mixed) * V)))
    vmax = float(np.abs(V).max())
    cross = sum(vmax * l1[i] * l1[j] for i in range(n) for j in range(n) if j != i)
    rhs = first + cross
    return lhs, rhs, bool(ok1 and lhs <= rhs + 1e-12)


def episode_regret(v_star_1: float, spec: FmdpSpec, policy, model=None) -> float:
    return float(v_star_1 - evaluate_policy(spec, policy, model)[0, spec.initial_index])
