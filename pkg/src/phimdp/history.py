"""Finite alphabets, interaction histories and the trace CSV format."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite symbol set with dense indices.

    ``values`` attaches a real number to each symbol; it is only meaningful
    for reward alphabets, where planning needs numeric rewards while all
    counting happens over indices.
    """

    labels: tuple[str, ...]
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("alphabet must contain at least one symbol")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in alphabet {labels}")
        if self.values is not None:
            values = tuple(float(v) for v in self.values)
            if len(values) != len(labels):
                raise ValueError("values must match labels one-to-one")
            object.__setattr__(self, "values", values)

    @classmethod
    def numeric(cls, values) -> "Alphabet":
        """Alphabet whose labels are the printed numbers themselves."""
        values = [float(v) for v in values]
        return cls(tuple(_fmt_number(v) for v in values), tuple(values))

    @classmethod
    def range(cls, size: int) -> "Alphabet":
        return cls(tuple(str(i) for i in range(size)))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self._lookup[str(label)]
        except KeyError:
            raise KeyError(f"unknown symbol {label!r}; alphabet is {self.labels}") from None

    def label(self, idx: int) -> str:
        return self.labels[idx]

    def value(self, idx: int) -> float:
        if self.values is None:
            return float(idx)
        return self.values[idx]

    @property
    def value_array(self) -> np.ndarray:
        if self.values is None:
            return np.arange(self.size, dtype=float)
        return np.asarray(self.values, dtype=float)

    @property
    def _lookup(self) -> dict[str, int]:
        # frozen dataclass: cache lazily in __dict__
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def check(self, idx: int, what: str = "symbol") -> int:
        idx = int(idx)
        if not 0 <= idx < self.size:
            raise ValueError(f"{what} index {idx} out of range for alphabet of size {self.size}")
        return idx


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


class _Buffer:
    """Growable storage shared by histories that extend one another."""

    __slots__ = ("obs", "act", "rew", "size")

    def __init__(self, capacity: int = 16):
        self.obs = np.empty(capacity, dtype=np.int64)
        self.act = np.empty(capacity, dtype=np.int64)
        self.rew = np.empty(capacity, dtype=np.int64)
        self.size = 0

    def grow(self, need: int):
        cap = len(self.obs)
        if need <= cap:
            return
        cap = max(need, 2 * cap)
        for name in ("obs", "act", "rew"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=np.int64)
            new[: len(old)] = old
            setattr(self, name, new)


class History:
    """An interaction record ``o1 a1 r1 ... o_{n-1} a_{n-1} r_{n-1} o_n``.

    Row ``t`` holds the observation seen at time ``t`` together with the
    action taken in response and the reward that followed it, so the
    reward stored at ``t`` belongs to the transition ``t -> t+1``.

    Histories behave as values.  ``append`` returns a new history and the
    receiver keeps reading its old contents; extending the newest history
    reuses the shared buffer so an online agent pays O(1) per step.
    """

    __slots__ = ("observations_alphabet", "actions_alphabet", "rewards_alphabet", "_buf", "_n")

    def __init__(self, observations: Alphabet, actions: Alphabet, rewards: Alphabet,
                 _buf: _Buffer | None = None, _n: int = 0):
        self.observations_alphabet = observations
        self.actions_alphabet = actions
        self.rewards_alphabet = rewards
        self._buf = _buf if _buf is not None else _Buffer()
        self._n = _n

    @classmethod
    def start(cls, observations: Alphabet, actions: Alphabet, rewards: Alphabet,
              first_observation: int) -> "History":
        h = cls(observations, actions, rewards)
        o = observations.check(first_observation, "observation")
        h._buf.obs[0] = o
        h._buf.size = 1
        h._n = 1
        return h

    @classmethod
    def empty(cls, observations: Alphabet, actions: Alphabet, rewards: Alphabet) -> "History":
        """h_0: no observation yet; ``observe`` supplies o_1."""
        return cls(observations, actions, rewards)

    def observe(self, o: int) -> "History":
        """Extend the empty history by its first observation."""
        if self._n != 0:
            raise ValueError("observe() only starts an empty history; use append(a, r, o)")
        return History.start(self.observations_alphabet, self.actions_alphabet, self.rewards_alphabet, o)

    @classmethod
    def from_arrays(cls, observations: Alphabet, actions: Alphabet, rewards: Alphabet,
                    obs, act, rew) -> "History":
        obs = np.asarray(obs, dtype=np.int64)
        act = np.asarray(act, dtype=np.int64)
        rew = np.asarray(rew, dtype=np.int64)
        n = len(obs)
        if len(act) != max(n - 1, 0) or len(rew) != max(n - 1, 0):
            raise ValueError(f"need {max(n - 1, 0)} actions and rewards for {n} observations, "
                             f"got {len(act)} and {len(rew)}")
        for arr, alpha, what in ((obs, observations, "observation"), (act, actions, "action"),
                                 (rew, rewards, "reward")):
            if len(arr) and (arr.min() < 0 or arr.max() >= alpha.size):
                bad = int(arr[(arr < 0) | (arr >= alpha.size)][0])
                raise ValueError(f"{what} index {bad} out of range for alphabet of size {alpha.size}")
        buf = _Buffer(max(16, n))
        buf.obs[:n] = obs
        buf.act[: n - 1] = act
        buf.rew[: n - 1] = rew
        buf.size = n
        return cls(observations, actions, rewards, buf, n)

    @property
    def n(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    @property
    def observations(self) -> np.ndarray:
        v = self._buf.obs[: self._n]
        v.flags.writeable = False
        return v

    @property
    def actions(self) -> np.ndarray:
        v = self._buf.act[: max(self._n - 1, 0)]
        v.flags.writeable = False
        return v

    @property
    def rewards(self) -> np.ndarray:
        v = self._buf.rew[: max(self._n - 1, 0)]
        v.flags.writeable = False
        return v

    def reward_values(self) -> np.ndarray:
        return self.rewards_alphabet.value_array[self.rewards]

    def step(self, t: int) -> tuple[int, int | None, int | None]:
        """(o_t, a_t, r_t) for 1-based ``t``; action and reward are None for the last row."""
        if not 1 <= t <= self._n:
            raise IndexError(f"time {t} outside 1..{self._n}")
        i = t - 1
        if t == self._n:
            return int(self._buf.obs[i]), None, None
        return int(self._buf.obs[i]), int(self._buf.act[i]), int(self._buf.rew[i])

    def append(self, a: int, r: int, o: int) -> "History":
        if self._n == 0:
            raise ValueError("cannot append an action to a history without an observation; use start()")
        a = self.actions_alphabet.check(a, "action")
        r = self.rewards_alphabet.check(r, "reward")
        o = self.observations_alphabet.check(o, "observation")
        buf = self._buf
        if buf.size != self._n:
            # someone already extended this history along another branch
            fresh = _Buffer(max(16, 2 * self._n))
            fresh.obs[: self._n] = buf.obs[: self._n]
            fresh.act[: self._n - 1] = buf.act[: self._n - 1]
            fresh.rew[: self._n - 1] = buf.rew[: self._n - 1]
            fresh.size = self._n
            buf = fresh
        buf.grow(self._n + 1)
        buf.act[self._n - 1] = a
        buf.rew[self._n - 1] = r
        buf.obs[self._n] = o
        buf.size = self._n + 1
        return History(self.observations_alphabet, self.actions_alphabet, self.rewards_alphabet,
                       buf, self._n + 1)

    def prefix(self, t: int) -> "History":
        """h_t as a history sharing storage (read-only view semantics)."""
        if not 0 <= t <= self._n:
            raise IndexError(f"prefix length {t} outside 0..{self._n}")
        return History(self.observations_alphabet, self.actions_alphabet, self.rewards_alphabet,
                       self._buf, t)

    def suffix_observations(self, k: int) -> tuple[int, ...]:
        if k < 0:
            raise ValueError("k must be nonnegative")
        k = min(k, self._n)
        return tuple(int(x) for x in self._buf.obs[self._n - k: self._n])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self._n).tobytes())
        h.update(self.observations.tobytes())
        h.update(self.actions.tobytes())
        h.update(self.rewards.tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, History):
            return NotImplemented
        return (self._n == other._n
                and self.observations_alphabet == other.observations_alphabet
                and self.actions_alphabet == other.actions_alphabet
                and self.rewards_alphabet == other.rewards_alphabet
                and np.array_equal(self.observations, other.observations)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))

    __hash__ = None

    def __repr__(self) -> str:
        return f"History(n={self._n})"


# --- trace CSV -------------------------------------------------------------

def format_trace(h: History) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "o", "a", "r"])
    O, A, R = h.observations_alphabet, h.actions_alphabet, h.rewards_alphabet
    obs, act, rew = h.observations, h.actions, h.rewards
    for i in range(h.n):
        if i < h.n - 1:
            w.writerow([i + 1, O.label(obs[i]), A.label(act[i]), R.label(rew[i])])
        else:
            w.writerow([i + 1, O.label(obs[i]), "", ""])
    return out.getvalue()


def write_trace(h: History, path) -> None:
    from .files import atomic_write_text
    atomic_write_text(path, format_trace(h))


def _sorted_labels(labels: set[str]) -> list[str]:
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _reward_alphabet(labels: list[str]) -> Alphabet:
    try:
        return Alphabet(tuple(labels), tuple(float(x) for x in labels))
    except ValueError:
        return Alphabet(tuple(labels))


def parse_trace(text: str, observations: Alphabet | None = None, actions: Alphabet | None = None,
                rewards: Alphabet | None = None) -> History:
    """Parse trace CSV text.

    Alphabets that are not supplied are inferred from the labels present,
    ordered numerically when every label is a number.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TraceFormatError("empty trace", 1)
    header = [c.strip() for c in rows[0]]
    if header != ["t", "o", "a", "r"]:
        raise TraceFormatError(f"expected header t,o,a,r, got {','.join(header)}", 1)
    steps = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        row = [c.strip() for c in row] + [""] * (4 - len(row))
        if len(row) > 4:
            raise TraceFormatError(f"expected 4 fields, got {len(row)}", lineno)
        t, o, a, r = row
        try:
            t = int(t)
        except ValueError:
            raise TraceFormatError(f"bad time index {t!r}", lineno) from None
        if t != len(steps) + 1:
            raise TraceFormatError(f"expected t={len(steps) + 1}, got {t}", lineno)
        if not o:
            raise TraceFormatError("missing observation", lineno)
        if steps and steps[-1][1] is None:
            raise TraceFormatError("only the final line may omit a,r", lineno - 1)
        if bool(a) != bool(r):
            raise TraceFormatError("action and reward must both be present or both omitted", lineno)
        steps.append((o, a or None, r or None, lineno))
    if not steps:
        raise TraceFormatError("trace has no steps", 2)
    # a full final row means the trailing observation was not recorded; drop its a,r
    if steps[-1][1] is not None:
        o, _, _, ln = steps[-1]
        steps[-1] = (o, None, None, ln)

    O = observations or Alphabet(tuple(_sorted_labels({s[0] for s in steps})))
    A = actions or Alphabet(tuple(_sorted_labels({s[1] for s in steps if s[1] is not None}) or ["0"]))
    R = rewards or _reward_alphabet(_sorted_labels({s[2] for s in steps if s[2] is not None}) or ["0"])

    obs, act, rew = [], [], []
    for o, a, r, ln in steps:
        try:
            obs.append(O.index(o))
            if a is not None:
                act.append(A.index(a))
                rew.append(R.index(r))
        except KeyError as e:
            raise TraceFormatError(str(e.args[0]), ln) from None
    return History.from_arrays(O, A, R, obs, act, rew)


def read_trace(path, **alphabets) -> History:
    return parse_trace(Path(path).read_text(), **alphabets)
