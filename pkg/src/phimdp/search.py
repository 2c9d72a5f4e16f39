"""Stochastic split/merge search over context trees."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coding import cost, support_cost_of_counts, transition_tables
from .estimate import CountTensor, accumulate
from ._kernels import propose_tables, split_relabel, table_bits
from .features import ContextTreeMap, propose_move
from .history import History
from .icost import icost, icost_from_ids

CRITERIA = ("cost", "icost", "cost+support")


@dataclass
class SearchConfig:
    iterations: int = 1000
    criterion: str = "cost"
    seed: int = 0
    log_every: int = 0
    icost_mode: str = "observed"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")


def accepts(cost_old: float, cost_new: float, q: float) -> bool:
    """Metropolis rule in bits: keep the proposal iff the saving exceeds log2(q)."""
    return cost_old - cost_new > math.log2(q)


def criterion_fn(criterion: str, icost_mode: str = "observed") -> Callable:
    if criterion == "cost":
        return lambda phi, h: cost(phi, h).total
    if criterion == "icost":
        return lambda phi, h: icost(phi, h, icost_mode).total
    if criterion == "cost+support":
        return lambda phi, h: support_cost_of_counts(accumulate(phi, h)).total
    raise ValueError(f"unknown criterion {criterion!r}")


def phi_improve(phi: ContextTreeMap, h: History, rng: np.random.Generator,
                criterion: str = "cost", cost_fn: Callable | None = None) -> ContextTreeMap:
    """One split/merge proposal, accepted by the Metropolis rule.

    ``cost_fn(phi, h)`` overrides the criterion; it is evaluated from
    scratch on both maps.
    """
    present = set(phi.state_sequence(h.observations)) if h.n else set()
    kind, site = propose_move(phi, rng, candidates=[s for s in phi.members if s in present])
    q = 1.0 - float(rng.random())
    if kind == "none":
        return phi
    proposal = phi.split(site) if kind == "split" else phi.merge(site)
    fn = cost_fn or criterion_fn(criterion)
    return proposal if accepts(fn(phi, h), fn(proposal, h), q) else phi


class Chain:
    """A context tree together with its state sequence on a history.

    Split and merge proposals rewrite only the times whose state they
    touch; the resulting integer state sequence is what the criterion is
    evaluated on.  Counts over the label table are kept current as the
    history grows.  ``refresh()`` recomputes everything from scratch and
    is the reference the incremental path is tested against.
    """

    def __init__(self, phi: ContextTreeMap, h: History, criterion: str = "cost",
                 icost_mode: str = "observed"):
        if criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        self.criterion = criterion
        self.icost_mode = icost_mode
        self.support = criterion == "cost+support"
        self.phi = phi
        self.n_actions = h.actions_alphabet.size
        self.n_rewards = h.rewards_alphabet.size
        self.reward_values = h.rewards_alphabet.value_array
        self._set_history(h)
        self.refresh()

    def _set_history(self, h: History):
        self.h = h
        self.obs = np.ascontiguousarray(h.observations, dtype=np.int64)
        self.act = np.ascontiguousarray(h.actions, dtype=np.int64)
        self.rew = np.ascontiguousarray(h.rewards, dtype=np.int64)

    # label table ------------------------------------------------------
    def _id(self, label) -> int:
        i = self.ids.get(label)
        if i is None:
            i = self.ids[label] = len(self.labels)
            self.labels.append(label)
        return i

    def refresh(self):
        self.labels: list = []
        self.ids: dict = {}
        seq = self.phi.state_sequence(self.obs) if len(self.obs) else []
        self.sid = np.fromiter((self._id(s) for s in seq), dtype=np.int64, count=len(seq))
        self._tab = None
        self._occ = None
        self._value = None

    def _compact(self):
        keep = self._live()
        remap = np.full(len(self.labels), -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        self.labels = [self.labels[i] for i in keep]
        self.ids = {s: i for i, s in enumerate(self.labels)}
        self.sid = remap[self.sid]
        self._tab = None
        self._occ = None

    # counts -----------------------------------------------------------
    def _tables(self, sid: np.ndarray) -> np.ndarray:
        return transition_tables(sid, len(self.labels), self.act, self.rew,
                                 self.n_actions, self.n_rewards)

    def _pad(self, arr: np.ndarray, axes: tuple) -> np.ndarray:
        extra = len(self.labels) - arr.shape[axes[0]]
        if extra <= 0:
            return arr
        width = [(0, extra) if i in axes else (0, 0) for i in range(arr.ndim)]
        return np.pad(arr, width)

    @property
    def table(self) -> np.ndarray:
        """Dense counts over the label table for the current state sequence."""
        if self._tab is None:
            self._tab = self._tables(self.sid)
        self._tab = self._pad(self._tab, (0, 2))
        return self._tab

    @property
    def occupancy(self) -> np.ndarray:
        """How many times each label occurs in the state sequence."""
        if self._occ is None:
            self._occ = np.bincount(self.sid, minlength=len(self.labels))
        self._occ = self._pad(self._occ, (0,))
        return self._occ

    def _live(self, sid: np.ndarray | None = None) -> np.ndarray:
        if sid is None:
            return np.flatnonzero(self.occupancy)
        return np.flatnonzero(np.bincount(sid, minlength=len(self.labels)))

    def live_table(self) -> tuple[list, np.ndarray]:
        """Occurring labels and the count array restricted to them."""
        live = self._live()
        tab = self.table
        if len(live) < tab.shape[0]:
            tab = tab.take(live, axis=0).take(live, axis=2)
        return [self.labels[i] for i in live], tab

    def counts(self, sid: np.ndarray | None = None) -> CountTensor:
        """Counts over the states that actually occur, ordered by label id."""
        if sid is None:
            states, tab = self.live_table()
            return CountTensor(states, tab, self.reward_values)
        live = self._live(sid)
        tab = self._tables(sid)[np.ix_(live, range(self.n_actions), live, range(self.n_rewards))]
        return CountTensor([self.labels[i] for i in live], tab, self.reward_values)

    # criterion --------------------------------------------------------
    def _evaluate(self, sid: np.ndarray, tab: np.ndarray | None = None) -> float:
        if self.criterion != "icost":
            if len(sid) < 2:
                return 0.0
            tab = self._tables(sid) if tab is None else tab
            state_bits, reward_bits = table_bits(tab, self.support)
            return state_bits + reward_bits
        c = self.counts(sid)
        dense = np.searchsorted(self._live(sid), sid)
        return icost_from_ids(c, dense, self.act, self.rew, self.icost_mode).total

    def evaluate(self, sid: np.ndarray) -> float:
        return self._evaluate(sid)

    @property
    def value(self) -> float:
        if self._value is None:
            self._value = self._evaluate(self.sid, self.table)
        return self._value

    # moves ------------------------------------------------------------
    def _child_ids(self, s) -> np.ndarray:
        return np.array([self._id((o,) + s) for o in range(self.phi.n_symbols)], dtype=np.int64)

    def _merge_map(self, s) -> np.ndarray:
        id_s = self._id(s)
        L = len(s)
        idmap = np.arange(len(self.labels), dtype=np.int64)
        for i, lab in enumerate(self.labels):
            if len(lab) >= L and lab[len(lab) - L:] == s:
                idmap[i] = id_s
        return idmap

    def split_ids(self, s) -> np.ndarray:
        id_s = self.ids.get(s)
        if id_s is None:
            return self.sid.copy()
        # times too early to see the extra symbol keep the label s, now provisional
        return split_relabel(self.sid, self.obs, id_s, len(s), self._child_ids(s))

    def merge_ids(self, s) -> np.ndarray:
        return self._merge_map(s)[self.sid]

    def realized_members(self) -> list:
        present = {self.labels[i] for i in self._live()}
        return [s for s in self.phi.members if s in present]

    def _propose(self, kind: str, site):
        """(sid, counts or None, value) of the proposal."""
        if self.criterion == "icost" or len(self.sid) < 2:
            sid = self.split_ids(site) if kind == "split" else self.merge_ids(site)
            return sid, None, self._evaluate(sid)
        if kind == "split":
            id_s = self.ids.get(site)
            if id_s is None:
                return self.sid.copy(), None, self.value
            ids = self._child_ids(site)
        else:
            id_s, ids = -1, self._merge_map(site)
        sid, tab, sb, rb = propose_tables(self.sid, self.obs, self.act, self.rew, kind, id_s, len(site),
                                          ids, len(self.labels), self.n_actions, self.n_rewards,
                                          self.support)
        return sid, tab, sb + rb

    def step(self, rng: np.random.Generator) -> bool:
        kind, site = propose_move(self.phi, rng, candidates=self.realized_members())
        q = 1.0 - float(rng.random())
        if kind == "none":
            return False
        old = self.value
        sid, tab, value = self._propose(kind, site)
        if not accepts(old, value, q):
            return False
        self.phi = self.phi.split(site) if kind == "split" else self.phi.merge(site)
        self.sid, self._value, self._tab, self._occ = sid, value, tab, None
        if len(self.labels) > 2 * len(self.phi) + 64:
            self._compact()
        return True

    def extend(self, h: History):
        """Follow a history that extends the current one by appended steps."""
        old_n = len(self.obs)
        if h.n < old_n:
            raise ValueError("history shrank")
        self._set_history(h)
        if h.n == old_n:
            return
        new = [self._id(self.phi.lookup(self.obs[: i + 1])) for i in range(old_n, h.n)]
        self.sid = np.concatenate([self.sid, np.asarray(new, dtype=np.int64)])
        if self._occ is not None:
            occ = self._pad(self._occ, (0,)).copy()
            for i in new:
                occ[i] += 1
            self._occ = occ
        if self._tab is not None and old_n >= 1:
            tab = self._pad(self._tab, (0, 2)).copy()
            for t in range(old_n - 1, h.n - 1):
                tab[self.sid[t], self.act[t], self.sid[t + 1], self.rew[t]] += 1
            self._tab = tab
        else:
            self._tab = None
        self._value = None  # recomputed on demand

    def current_state(self):
        return self.labels[int(self.sid[-1])]

    def snapshot(self) -> tuple:
        # arrays are replaced, never written in place, so references suffice
        return (self.phi, self.sid, self._value, self._tab, self._occ, self.labels, self.ids)

    def restore(self, snap: tuple):
        self.phi, self.sid, self._value, self._tab, self._occ, self.labels, self.ids = snap

    def improve(self, rng: np.random.Generator, iterations: int, keep_best: bool = True) -> int:
        """Run ``iterations`` steps; with ``keep_best`` end on the cheapest map visited.

        The starting map is kept unless a strictly cheaper one turns up.
        Returns the number of accepted proposals.
        """
        accepted = 0
        best, best_value = None, None
        if keep_best and iterations:
            best, best_value = self.snapshot(), self.value
        for _ in range(iterations):
            if self.step(rng):
                accepted += 1
                if keep_best and self.value < best_value - 1e-9:
                    best, best_value = self.snapshot(), self.value
        if keep_best and accepted:
            self.restore(best)
        return accepted


@dataclass
class AnnealResult:
    best: ContextTreeMap
    best_cost: float
    final: ContextTreeMap
    costs: np.ndarray
    best_costs: np.ndarray
    accepted: np.ndarray = field(repr=False)

    def log_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iter", "cost", "accepted"])
        for i, (c, a) in enumerate(zip(self.costs, self.accepted), start=1):
            w.writerow([i, repr(float(c)), int(a)])
        return out.getvalue()


def anneal(phi0: ContextTreeMap, h: History, cfg: SearchConfig,
           rng: np.random.Generator | None = None, log=None) -> AnnealResult:
    """Run ``cfg.iterations`` improve steps and keep the cheapest map seen."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    chain = Chain(phi0, h, cfg.criterion, cfg.icost_mode)
    best, best_cost = chain.phi, chain.value
    costs = np.empty(cfg.iterations)
    best_costs = np.empty(cfg.iterations)
    accepted = np.zeros(cfg.iterations, dtype=bool)
    for i in range(cfg.iterations):
        accepted[i] = chain.step(rng)
        if chain.value < best_cost:
            best, best_cost = chain.phi, chain.value
        costs[i] = chain.value
        best_costs[i] = best_cost
        if log is not None and cfg.log_every and (i + 1) % cfg.log_every == 0:
            log.info("iter %d cost %.3f best %.3f states %d", i + 1, chain.value, best_cost, len(chain.phi))
    return AnnealResult(best, best_cost, chain.phi, costs, best_costs, accepted)
