"""Transition/reward counts for a fixed feature map and the estimated MDP."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .features import EXPLORE, FeatureMap, state_label
from .history import History


def index_states(states) -> tuple[list, np.ndarray]:
    """Assign dense ids to state labels in order of first appearance."""
    ids: dict = {}
    seq = np.empty(len(states), dtype=np.int64)
    for i, s in enumerate(states):
        j = ids.get(s)
        if j is None:
            j = ids[s] = len(ids)
        seq[i] = j
    return list(ids), seq


class CountTensor:
    """Counts n[s, a, s', r'] of realized transitions ``s -a-> s' (r')``.

    Stored densely over the realized states; desk-scale state sets keep
    the (m, |A|, m, |R|) array small.  Marginals are computed on demand and
    cached, the tensor being immutable once built.
    """

    def __init__(self, states: list, counts: np.ndarray, rewards=None):
        self.states = list(states)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.counts.flags.writeable = False
        self.reward_values = None if rewards is None else np.asarray(rewards, dtype=float)
        self._index = {s: i for i, s in enumerate(self.states)}
        m = len(self.states)
        if self.counts.ndim != 4 or self.counts.shape[0] != m or self.counts.shape[2] != m:
            raise ValueError(f"count array shape {self.counts.shape} does not match {m} states")

    @classmethod
    def from_ids(cls, states: list, sid: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                 n_actions: int, n_rewards: int, reward_values=None) -> "CountTensor":
        m = len(states)
        sid = np.asarray(sid, dtype=np.int64)
        src, dst = sid[:-1], sid[1:]
        key = ((src * n_actions + actions) * m + dst) * n_rewards + rewards
        flat = np.bincount(key, minlength=m * n_actions * m * n_rewards)
        return cls(states, flat.reshape(m, n_actions, m, n_rewards), reward_values)

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return self.counts.shape[1]

    @property
    def n_rewards(self) -> int:
        return self.counts.shape[3]

    def index(self, s) -> int:
        try:
            return self._index[s]
        except KeyError:
            raise KeyError(f"state {s!r} not in count tensor") from None

    def _cached(self, name, fn):
        val = self.__dict__.get(name)
        if val is None:
            val = fn()
            val.flags.writeable = False
            self.__dict__[name] = val
        return val

    @property
    def sa_s(self) -> np.ndarray:
        """n_{ss'}^{a+} with shape (m, |A|, m)."""
        return self._cached("_sa_s", lambda: self.counts.sum(axis=3))

    @property
    def sa(self) -> np.ndarray:
        """n_{s+}^{a+} with shape (m, |A|)."""
        return self._cached("_sa", lambda: self.sa_s.sum(axis=2))

    @property
    def dest_reward(self) -> np.ndarray:
        """n_{+s'}^{+r'} with shape (m, |R|)."""
        return self._cached("_dr", lambda: self.counts.sum(axis=(0, 1)))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def get(self, s, a, s2, r) -> int:
        return int(self.counts[self.index(s), a, self.index(s2), r])

    def items(self):
        for idx in zip(*np.nonzero(self.counts)):
            s, a, s2, r = (int(x) for x in idx)
            yield (self.states[s], a, self.states[s2], r), int(self.counts[s, a, s2, r])

    def to_csv(self, observations=None) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["s", "a", "s'", "r", "count"])
        for (s, a, s2, r), c in self.items():
            w.writerow([state_label(s, observations), a, state_label(s2, observations), r, c])
        return out.getvalue()


def accumulate(phi: FeatureMap, h: History) -> CountTensor:
    """Count (s_t, a_t, s_{t+1}, r_t) for t = 1..n-1 with s_t = Phi(h_t)."""
    nA, nR = h.actions_alphabet.size, h.rewards_alphabet.size
    if h.n == 0:
        return CountTensor([], np.zeros((0, nA, 0, nR), dtype=np.int64), h.rewards_alphabet.value_array)
    states, sid = index_states(phi.state_sequence(h.observations))
    return CountTensor.from_ids(states, sid, h.actions, h.rewards, nA, nR, h.rewards_alphabet.value_array)


def estimate_T(c: CountTensor) -> np.ndarray:
    """Row-normalized transition frequencies; all-zero rows for unvisited (s, a)."""
    num = c.sa_s.astype(float)
    den = c.sa.astype(float)[:, :, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        T = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return T


def estimate_R(c: CountTensor, reward_values=None) -> np.ndarray:
    """Mean reward per realized (s, a, s'); NaN where the cell was never realized."""
    vals = c.reward_values if reward_values is None else np.asarray(reward_values, dtype=float)
    if vals is None:
        vals = np.arange(c.n_rewards, dtype=float)
    num = c.counts @ vals
    den = c.sa_s.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


@dataclass
class MdpEstimate:
    """Estimated MDP over ``states`` (which may end with EXPLORE).

    ``T`` has shape (m, |A|, m) and ``R`` the same shape holding expected
    rewards, NaN for unrealized cells.
    """

    states: list
    T: np.ndarray
    R: np.ndarray
    gamma: float = 0.9
    rmax_e: float | None = None
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return self.T.shape[1]

    @property
    def extended(self) -> bool:
        return EXPLORE in self.index


def estimate(c: CountTensor, gamma: float = 0.9) -> MdpEstimate:
    """Plain frequency estimate without the exploration state."""
    return MdpEstimate(list(c.states), estimate_T(c), estimate_R(c), gamma)


def extend_for_exploration(c: CountTensor, rmax_e: float, gamma: float = 0.9,
                           reward_values=None) -> MdpEstimate:
    """Add the absorbing exploration state with one phantom visit from every (s, a).

    The phantom counts live only in the returned estimate; ``c`` is left
    untouched so code lengths never see them.  The phantom transition is
    attributed a synthetic reward carrying ``rmax_e``.
    """
    vals = c.reward_values if reward_values is None else np.asarray(reward_values, dtype=float)
    if vals is not None and len(vals) and rmax_e < float(np.max(vals)):
        raise ValueError(f"exploration reward {rmax_e} below max reward {float(np.max(vals))}")
    m, nA = c.m, c.n_actions
    e = m
    n_ext = np.zeros((m + 1, nA, m + 1), dtype=float)
    n_ext[:m, :, :m] = c.sa_s
    n_ext[:m, :, e] = 1.0
    n_ext[e, :, e] = 1.0
    T = n_ext / n_ext.sum(axis=2, keepdims=True)

    R = np.full((m + 1, nA, m + 1), np.nan)
    R[:m, :, :m] = estimate_R(c, vals)
    R[:, :, e] = rmax_e
    return MdpEstimate(list(c.states) + [EXPLORE], T, R, gamma, rmax_e)
