"""Code lengths (in bits) and the Cost of a feature map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._kernels import transition_counts
from .estimate import CountTensor, accumulate
from .features import FeatureMap
from .history import History


@dataclass(frozen=True)
class CostBreakdown:
    state_bits: float
    reward_bits: float

    @property
    def total(self) -> float:
        return self.state_bits + self.reward_bits

    def __iter__(self):
        yield self.state_bits
        yield self.reward_bits
        yield self.total


def code_lengths(counts: np.ndarray, support_of: int | None = None) -> np.ndarray:
    """Row-wise i.i.d. code length n*H(counts/n) + (m'-1)/2 * log2(n); 0 for empty rows.

    With ``support_of=K`` each nonempty row also pays log2 C(K, m') bits to
    name which of K categories occur, so a one-sample row is no longer free.
    """
    c = np.asarray(counts, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    if c.size <= _SMALL:
        return _code_lengths_small(c.tolist(), support_of)
    if c.size and c.min() < 0:
        raise ValueError("counts must be nonnegative")
    pos = c > 0
    logc = np.log2(c, where=pos, out=np.zeros_like(c))
    n = c.sum(axis=1)
    logn = np.log2(np.maximum(n, 1.0))
    m_prime = pos.sum(axis=1)
    # n*H = n log n - sum c log c; empty rows give 0 - 0
    bits = n * logn - (c * logc).sum(axis=1) + 0.5 * np.maximum(m_prime - 1, 0) * logn
    if support_of is not None:
        bits = bits + _log2_binom_row(int(support_of))[m_prime]
    return bits


_SMALL = 1024  # below this many cells plain Python beats numpy call overhead


def _code_lengths_small(rows: list, support_of: int | None) -> np.ndarray:
    binom = None if support_of is None else _log2_binom_row(int(support_of))
    log2 = math.log2
    out = []
    for row in rows:
        n = 0.0
        clogc = 0.0
        m_prime = 0
        for x in row:
            if x > 0:
                n += x
                clogc += x * log2(x)
                m_prime += 1
            elif x < 0:
                raise ValueError("counts must be nonnegative")
        if m_prime == 0:
            out.append(0.0)
            continue
        logn = log2(n)
        bits = n * logn - clogc + 0.5 * (m_prime - 1) * logn
        if binom is not None:
            bits += binom[m_prime]
        out.append(bits)
    return np.array(out)


def log2_binom(k: int, j: int) -> float:
    return (math.lgamma(k + 1) - math.lgamma(j + 1) - math.lgamma(k - j + 1)) / math.log(2)


@lru_cache(maxsize=256)
def _log2_binom_row(k: int) -> np.ndarray:
    row = np.array([log2_binom(k, j) for j in range(k + 1)])
    row.flags.writeable = False
    return row


def code_length(counts: Sequence[int]) -> float:
    return float(code_lengths(np.asarray(counts))[0])


def state_code(c: CountTensor) -> float:
    """Sum over (s, a) of the code length of the successor-state counts."""
    if c.m == 0:
        return 0.0
    return float(code_lengths(c.sa_s.reshape(-1, c.m)).sum())


def reward_code(c: CountTensor) -> float:
    """Sum over destination states of the code length of their reward counts."""
    if c.m == 0:
        return 0.0
    return float(code_lengths(c.dest_reward).sum())


def cost_of_counts(c: CountTensor) -> CostBreakdown:
    return CostBreakdown(state_code(c), reward_code(c))


def cost(phi: FeatureMap, h: History) -> CostBreakdown:
    return cost_of_counts(accumulate(phi, h))


def best_phi(candidates, h: History):
    """Minimal-cost candidate; ties go to fewer realized states, then input order."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("best_phi needs at least one candidate")
    best, best_total, best_m = None, None, None
    for phi in candidates:
        c = accumulate(phi, h)
        total = cost_of_counts(c).total
        # summation order differs between relabelled partitions; compare with slack
        if best is None or total < best_total - 1e-9 or (abs(total - best_total) <= 1e-9 and c.m < best_m):
            best, best_total, best_m = phi, total, c.m
    return best


def support_cost_of_counts(c: CountTensor) -> CostBreakdown:
    """Cost plus the support term: state rows name their successors among
    the realized states, reward rows their rewards among the alphabet."""
    if c.m == 0:
        return CostBreakdown(0.0, 0.0)
    sa_s = c.sa_s.reshape(-1, c.m)
    sa_s = sa_s[sa_s.any(axis=1)]
    dr = c.dest_reward[c.dest_reward.any(axis=1)]
    return CostBreakdown(float(code_lengths(sa_s, c.m).sum()),
                         float(code_lengths(dr, dr.shape[1]).sum()))


def transition_tables(sid: np.ndarray, n_labels: int, actions: np.ndarray, rewards: np.ndarray,
                      n_actions: int, n_rewards: int) -> np.ndarray:
    """Dense counts (n_labels, |A|, n_labels, |R|) of an integer state sequence."""
    flat = transition_counts(sid, actions, rewards, n_labels, n_actions, n_rewards)
    return flat.reshape(n_labels, n_actions, n_labels, n_rewards)


def cost_of_tables(tab: np.ndarray, support: bool = False) -> CostBreakdown:
    """Cost of a dense count array that may contain unused labels.

    Unused labels only give empty rows, which code to zero bits; with
    ``support`` the successor support is counted among the labels that
    occur.
    """
    L, A, _, R = tab.shape
    sa_s = tab.sum(axis=3).reshape(L * A, L)
    dr = tab.sum(axis=(0, 1))
    if not support:
        return CostBreakdown(float(code_lengths(sa_s).sum()), float(code_lengths(dr).sum()))
    m_live = int(np.count_nonzero(sa_s.any(axis=0) | sa_s.reshape(L, A * L).any(axis=1)))
    return CostBreakdown(float(code_lengths(sa_s, m_live).sum()),
                         float(code_lengths(dr, R).sum()))


def cost_from_ids(sid: np.ndarray, n_labels: int, actions: np.ndarray, rewards: np.ndarray,
                  n_actions: int, n_rewards: int, support: bool = False) -> CostBreakdown:
    """Cost straight from an integer state sequence (labels < n_labels)."""
    if len(sid) < 2:
        return CostBreakdown(0.0, 0.0)
    tab = transition_tables(np.asarray(sid), n_labels, actions, rewards, n_actions, n_rewards)
    return cost_of_tables(tab, support)
