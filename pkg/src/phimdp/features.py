"""Feature maps from histories to states.

States are tuples of observation indices in temporal order, oldest
first, so the context ``o_{t-k+1} ... o_t`` is ``(o_{t-k+1}, ..., o_t)`` and
the empty context is ``()``.  A context tree is stored as its leaf set:
a complete, suffix-free set of such tuples.

When a history is still shorter than the context it would need, the map
returns the whole observation prefix as a provisional state.  Provisional
states never coincide with tree members, so they cannot be confused with
real contexts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .history import Alphabet, History

State = tuple  # tuple[int, ...]; the exploration state is EXPLORE


class _ExploreState:
    """Marker for the synthetic absorbing exploration state."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXPLORE"

    def __reduce__(self):
        return (_ExploreState, ())


EXPLORE = _ExploreState()


class InvalidMove(ValueError):
    """A split or merge whose precondition does not hold."""


def state_label(s, observations: Alphabet | None = None) -> str:
    if s is EXPLORE:
        return "e"
    if len(s) == 0:
        return "-"
    if observations is None:
        return "".join(str(x) for x in s) if all(x < 10 for x in s) else " ".join(str(x) for x in s)
    labels = [observations.label(x) for x in s]
    sep = "" if all(len(lab) == 1 for lab in observations.labels) else " "
    return sep.join(labels)


@dataclass(frozen=True)
class KOrderMap:
    """Phi_k: the last ``k`` observations."""

    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")

    def apply(self, h: History) -> State:
        if h.n < 1:
            raise ValueError("feature maps need at least one observation")
        return h.suffix_observations(self.k)

    def state_sequence(self, obs: np.ndarray) -> list[State]:
        obs = [int(x) for x in obs]
        k = self.k
        return [tuple(obs[max(0, i + 1 - k): i + 1]) for i in range(len(obs))]

    def __str__(self):
        return f"Phi_{self.k}"


@dataclass(frozen=True)
class ContextTreeMap:
    """Phi_S for a complete suffix-free set S over an alphabet of ``n_symbols``."""

    suffixes: frozenset
    n_symbols: int

    def __post_init__(self):
        object.__setattr__(self, "suffixes", frozenset(tuple(int(x) for x in s) for s in self.suffixes))
        if self.n_symbols < 1:
            raise ValueError("alphabet must be nonempty")
        if not self.suffixes:
            raise ValueError("suffix set must be nonempty")
        for s in self.suffixes:
            if any(not 0 <= x < self.n_symbols for x in s):
                raise ValueError(f"context {s} uses symbols outside 0..{self.n_symbols - 1}")
        if not is_suffix_free(self.suffixes):
            raise ValueError("suffix set is not suffix-free")
        if not is_complete(self.suffixes, self.n_symbols):
            raise ValueError("suffix set is not complete")

    @classmethod
    def root(cls, n_symbols: int) -> "ContextTreeMap":
        return cls(frozenset({()}), n_symbols)

    @classmethod
    def full(cls, depth: int, n_symbols: int) -> "ContextTreeMap":
        """The depth-``depth`` tree, equivalent to Phi_depth on long histories."""
        sets = [()]
        for _ in range(depth):
            sets = [(o,) + s for s in sets for o in range(n_symbols)]
        return cls(frozenset(sets), n_symbols)

    @property
    def members(self) -> list[State]:
        """Members in a fixed order (by length, then lexicographically)."""
        cached = self.__dict__.get("_members")
        if cached is None:
            cached = sorted(self.suffixes, key=lambda s: (len(s), s))
            object.__setattr__(self, "_members", cached)
        return cached

    @property
    def depth(self) -> int:
        d = self.__dict__.get("_depth")
        if d is None:
            d = max(len(s) for s in self.suffixes)
            object.__setattr__(self, "_depth", d)
        return d

    def __len__(self) -> int:
        return len(self.suffixes)

    def __contains__(self, s) -> bool:
        return s in self.suffixes

    def lookup(self, obs) -> State:
        """State of an observation string given oldest-first."""
        n = len(obs)
        for L in range(0, min(n, self.depth) + 1):
            s = tuple(int(x) for x in obs[n - L:]) if L else ()
            if s in self.suffixes:
                return s
        return tuple(int(x) for x in obs)

    def apply(self, h: History) -> State:
        if h.n < 1:
            raise ValueError("feature maps need at least one observation")
        return self.lookup(h.observations)

    def state_sequence(self, obs: np.ndarray) -> list[State]:
        """Phi(h_t) for t = 1..n, computed member by member with array masks."""
        obs = np.asarray(obs, dtype=np.int64)
        n = len(obs)
        out: list = [None] * n
        for s in self.members:
            L = len(s)
            if L > n:
                continue
            mask = np.ones(n - L + 1, dtype=bool)
            for j, sym in enumerate(s):
                mask &= obs[j: n - L + 1 + j] == sym
            for i in np.flatnonzero(mask) + (L - 1):
                out[i] = s
        for i in range(n):
            if out[i] is None:
                out[i] = tuple(int(x) for x in obs[: i + 1])
        return out

    @classmethod
    def _trusted(cls, suffixes: frozenset, n_symbols: int) -> "ContextTreeMap":
        # split and merge preserve completeness and suffix-freeness by construction
        obj = object.__new__(cls)
        object.__setattr__(obj, "suffixes", suffixes)
        object.__setattr__(obj, "n_symbols", n_symbols)
        return obj

    def split(self, s: State) -> "ContextTreeMap":
        s = tuple(s)
        if s not in self.suffixes:
            raise InvalidMove(f"cannot split {s}: not a member")
        children = {(o,) + s for o in range(self.n_symbols)}
        return ContextTreeMap._trusted((self.suffixes - {s}) | children, self.n_symbols)

    def merge(self, s: State) -> "ContextTreeMap":
        s = tuple(s)
        children = {(o,) + s for o in range(self.n_symbols)}
        if not children <= self.suffixes:
            missing = sorted(children - self.suffixes)
            raise InvalidMove(f"cannot merge at {s}: children {missing} not all present")
        return ContextTreeMap._trusted((self.suffixes - children) | {s}, self.n_symbols)

    def can_merge(self, s: State) -> bool:
        return all((o,) + tuple(s) in self.suffixes for o in range(self.n_symbols))

    def __str__(self):
        return "{" + ",".join(state_label(s) for s in self.members) + "}"


FeatureMap = KOrderMap | ContextTreeMap


def is_suffix_free(suffixes: Iterable[State]) -> bool:
    members = set(suffixes)
    for s in members:
        for L in range(len(s)):
            if s[len(s) - L:] in members:
                return False
    return True


def is_complete(suffixes: Iterable[State], n_symbols: int) -> bool:
    """Kraft equality; for a suffix-free set this is equivalent to completeness."""
    suffixes = list(suffixes)
    depth = max((len(s) for s in suffixes), default=0)
    return sum(n_symbols ** (depth - len(s)) for s in suffixes) == n_symbols ** depth


def random_neighbor(phi: ContextTreeMap, rng: np.random.Generator) -> ContextTreeMap:
    """A split (probability 1/2) or merge proposal around a uniformly chosen member."""
    move, site = propose_move(phi, rng)
    if move == "split":
        return phi.split(site)
    if move == "merge":
        return phi.merge(site)
    return phi


def propose_move(phi: ContextTreeMap, rng: np.random.Generator, p: float | None = None,
                 candidates: list | None = None):
    """Draw a member and a branch; returns (kind, site) with kind in split/merge/none.

    ``candidates`` restricts the draw (the search passes the members that
    occur in the history).  The merge site is the parent context of the
    drawn member (its oldest symbol dropped); the merge is legal only if
    every child of that parent is currently a member.
    """
    members = candidates if candidates else phi.members
    s = members[int(rng.integers(len(members)))]
    if p is None:
        p = float(rng.random())
    if p > 0.5:
        return "split", s
    if len(s) == 0:
        return "none", s
    parent = s[1:]
    if phi.can_merge(parent):
        return "merge", parent
    return "none", parent


# --- suffix-set file format -------------------------------------------------

def format_suffix_set(phi: ContextTreeMap, observations: Alphabet | None = None) -> str:
    return "".join(state_label(s, observations) + "\n" for s in phi.members)


def parse_suffix_set(text: str, observations: Alphabet) -> ContextTreeMap:
    single = all(len(lab) == 1 for lab in observations.labels)
    suffixes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "-":
            suffixes.append(())
            continue
        tokens = line.split() if (" " in line or not single) else list(line)
        try:
            suffixes.append(tuple(observations.index(tok) for tok in tokens))
        except KeyError as e:
            raise ValueError(f"line {lineno}: {e.args[0]}") from None
    if not suffixes:
        raise ValueError("suffix-set file lists no contexts")
    if len(set(suffixes)) != len(suffixes):
        raise ValueError("suffix-set file lists a context twice")
    try:
        return ContextTreeMap(frozenset(suffixes), observations.size)
    except ValueError as e:
        raise ValueError(f"invalid suffix set: {e}") from None


def read_suffix_set(path, observations: Alphabet) -> ContextTreeMap:
    return parse_suffix_set(Path(path).read_text(), observations)
