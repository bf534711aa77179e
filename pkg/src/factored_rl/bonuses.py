"""Log factors and confidence bonuses (Hoeffding and Bernstein forms).

Each scalar function has a numpy-friendly body, so passing arrays of counts
evaluates the bonus for many cells at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UndefinedBonusError(ValueError):
    """A bonus was requested with a zero visit count."""


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _check_n(*Ns):
    for N in Ns:
        if np.any(np.asarray(N) <= 0):
            raise UndefinedBonusError("bonus requires every count N >= 1")


def log_factor_reward(m, T, scope_card, delta) -> float:
    _check_delta(delta)
    if min(m, T, scope_card) <= 0:
        raise ValueError("m, T and scope_card must be positive")
    return math.log(18.0 * m * T * scope_card / delta)


def log_factor_transition(n, T, S, A, delta) -> float:
    _check_delta(delta)
    if min(n, T, S, A) <= 0:
        raise ValueError("n, T, S and A must be positive")
    return math.log(18.0 * n * T * S * A / delta)


@dataclass(frozen=True)
class LogFactors:
    L_R: tuple
    L_P: float
    delta: float
    T: int

    @classmethod
    def for_dims(cls, dims, reward_scopes, K: int, H: int, delta: float) -> "LogFactors":
        T = int(K) * int(H)
        m = len(reward_scopes)
        L_R = tuple(log_factor_reward(m, T, dims.scope_card(sc), delta) for sc in reward_scopes)
        return cls(L_R, log_factor_transition(dims.n, T, dims.S, dims.A, delta), float(delta), T)


def cb_reward_hoeffding(L_R_i, N):
    _check_n(N)
    return np.sqrt(2.0 * L_R_i / np.asarray(N, dtype=float))


def phi(S_j, L_P, N_j):
    _check_n(N_j)
    N_j = np.asarray(N_j, dtype=float)
    return np.sqrt(4.0 * S_j * L_P / N_j) + 4.0 * S_j * L_P / (3.0 * N_j)


def cb_transition_hoeffding(H, L_P, N_i, phis, i):
    """First-order term plus ``H * phi_i * sum_{j != i} phi_j``."""
    _check_n(N_i)
    phis = [np.asarray(p, dtype=float) for p in phis]
    cross = sum((p for j, p in enumerate(phis) if j != i), np.zeros_like(phis[i]))
    return np.sqrt(2.0 * H * H * L_P / np.asarray(N_i, dtype=float)) + H * phis[i] * cross


def cb_reward_bernstein(sigma2_R, L_R_i, N):
    _check_n(N)
    N = np.asarray(N, dtype=float)
    return np.sqrt(2.0 * np.asarray(sigma2_R) * L_R_i / N) + 8.0 * L_R_i / (3.0 * N)


def eta(H, L_P, N_i, state_dims, all_N, i):
    """Higher-order part of the Bernstein transition bonus; sums include j = i."""
    _check_n(N_i, *all_N)
    N_i = np.asarray(N_i, dtype=float)
    inner = 0.0
    phis = []
    for S_j, N_j in zip(state_dims, all_N):
        N_j = np.asarray(N_j, dtype=float)
        inner = inner + (4.0 * S_j * L_P / N_j) ** 0.25 + np.sqrt(4.0 * S_j * L_P / (3.0 * N_j))
        phis.append(phi(S_j, L_P, N_j))
    return np.sqrt(16.0 * H * H * L_P / N_i) * inner + H * phis[i] * sum(phis)


def cb_transition_bernstein(sigma2_P, u, H, L_P, N_i, state_dims, all_N, i=0):
    _check_n(N_i, *all_N)
    N = np.asarray(N_i, dtype=float)
    return (np.sqrt(4.0 * np.asarray(sigma2_P) * L_P / N)
            + np.sqrt(2.0 * np.asarray(u) * L_P / N)
            + eta(H, L_P, N_i, state_dims, all_N, i))


def flat_ucbvi_ch_bonus(L, H, N):
    """Flat UCBVI-CH bonus, reward plus transition part."""
    _check_n(N)
    N = np.asarray(N, dtype=float)
    return np.sqrt(2.0 * L / N) + np.sqrt(2.0 * H * H * L / N)
