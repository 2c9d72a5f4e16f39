"""Reward-only code length with the states summed out (ICost)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimate import CountTensor, index_states
from .features import FeatureMap
from .history import History


@dataclass(frozen=True)
class ICostResult:
    neg_log_likelihood: float
    parameter_penalty: float
    M: int

    @property
    def total(self) -> float:
        return self.neg_log_likelihood + self.parameter_penalty


def u_family(c: CountTensor) -> np.ndarray:
    """U[a, r, s, s'] = n_{ss'}^{ar'} / n_{s+}^{a+}; zero rows where (s, a) was never left."""
    den = c.sa.astype(float)  # (m, A)
    safe = np.where(den > 0, den, 1.0)
    U = c.counts / safe[:, :, None, None]  # (m, A, m, R)
    return np.ascontiguousarray(U.transpose(1, 3, 0, 2))


def _check(U, s0, actions, rewards):
    U = np.asarray(U, dtype=float)
    if U.ndim != 4 or U.shape[2] != U.shape[3]:
        raise ValueError(f"U must have shape (A, R, m, m), got {U.shape}")
    if len(actions) != len(rewards):
        raise ValueError("action and reward sequences differ in length")
    if not 0 <= s0 < U.shape[2]:
        raise ValueError(f"initial state {s0} outside 0..{U.shape[2] - 1}")
    return U


def reward_log_likelihood(U, s0: int, actions, rewards) -> float:
    """log2 P_U(r_1..n | a_1..n) by a forward pass renormalized at every step."""
    U = _check(U, s0, actions, rewards)
    v = np.zeros(U.shape[2])
    v[s0] = 1.0
    log_p = 0.0
    for a, r in zip(actions, rewards):
        v = v @ U[a, r]
        z = v.sum()
        if z <= 0.0:
            return -math.inf
        log_p += math.log2(z)
        v /= z
    return log_p


def reward_likelihood(U, s0: int, actions, rewards) -> float:
    """P_U(r|a) = sum over s_n of [U^{a1 r1} ... U^{an rn}]_{s0 sn}."""
    return 2.0 ** reward_log_likelihood(U, s0, actions, rewards)


def parameter_count(c: CountTensor, mode: str = "observed") -> int:
    if mode == "full":
        m = c.m
        return m * (m - 1) * c.n_actions * (c.n_rewards - 1)
    if mode == "observed":
        cells = int(np.count_nonzero(c.counts))
        rows = int(np.count_nonzero(c.sa))
        return cells - rows
    raise ValueError(f"unknown parameter-count mode {mode!r}")


def icost(phi: FeatureMap, h: History, mode: str = "observed") -> ICostResult:
    if h.n == 0:
        return ICostResult(0.0, 0.0, 0)
    states, sid = index_states(phi.state_sequence(h.observations))
    c = CountTensor.from_ids(states, sid, h.actions, h.rewards, h.actions_alphabet.size,
                             h.rewards_alphabet.size, h.rewards_alphabet.value_array)
    return icost_from_ids(c, sid, h.actions, h.rewards, mode)


def icost_from_ids(c: CountTensor, sid, actions, rewards, mode: str = "observed") -> ICostResult:
    n = len(actions)
    M = parameter_count(c, mode) if c.m else 0
    if n == 0:
        return ICostResult(0.0, 0.0, M)
    ll = reward_log_likelihood(u_family(c), int(sid[0]), actions, rewards)
    # the estimate comes from this very sequence, so every step has positive mass
    if not math.isfinite(ll):
        raise RuntimeError("reward sequence has zero probability under its own frequency estimate")
    return ICostResult(-ll, 0.5 * M * math.log2(n), M)
