"""Finite environments driven by a seeded random generator.

An environment exposes its three alphabets, ``reset()`` returning the
first observation, and ``step(a)`` returning ``(observation, reward)``;
the reward is the one earned by ``a``, paired with the observation it
leads to.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .history import Alphabet


class EnvFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        prefix = f"{path}:" if path is not None else ""
        if line is not None:
            prefix += f"line {line}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


class Env(Protocol):
    observations: Alphabet
    actions: Alphabet
    rewards: Alphabet

    def reset(self) -> int: ...

    def step(self, a: int) -> tuple[int, int]: ...


class TinyExampleEnv:
    """Fair-coin observations with reward 2*o_prev + o_new and a single action."""

    observations = Alphabet(("0", "1"))
    actions = Alphabet(("0",))
    rewards = Alphabet.numeric([0, 1, 2, 3])

    def __init__(self, seed=None, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.prev = 0

    def reset(self) -> int:
        self.prev = int(self.rng.integers(2))
        return self.prev

    def step(self, a: int) -> tuple[int, int]:
        return tiny_step(self, a)


def tiny_step(env: TinyExampleEnv, a: int) -> tuple[int, int]:
    if a != 0:
        raise ValueError(f"the tiny example has a single action 0, got {a}")
    o = int(env.rng.integers(2))
    r = 2 * env.prev + o
    env.prev = o
    return o, r


@dataclass
class TabularModel:
    """Hidden-state MDP: ``T[s, a, s']``, ``obs[s]`` and ``Rdist[s, a, s', r]``."""

    states: tuple[str, ...]
    observations: Alphabet
    actions: Alphabet
    rewards: Alphabet
    T: np.ndarray
    obs: np.ndarray
    Rdist: np.ndarray
    initial: int = 0

    def validate(self):
        S, A = len(self.states), self.actions.size
        if self.T.shape != (S, A, S):
            raise ValueError(f"transition array has shape {self.T.shape}, expected {(S, A, S)}")
        sums = self.T.sum(axis=2)
        if not np.allclose(sums, 1.0, atol=1e-9):
            s, a = np.argwhere(~np.isclose(sums, 1.0, atol=1e-9))[0]
            raise ValueError(f"transitions from state {self.states[s]} under action "
                             f"{self.actions.label(a)} sum to {sums[s, a]:.6g}")
        reachable = self.T > 0
        rsums = self.Rdist.sum(axis=3)
        bad = reachable & ~np.isclose(rsums, 1.0, atol=1e-9)
        if np.any(bad):
            s, a, s2 = np.argwhere(bad)[0]
            raise ValueError(f"no reward distribution for {self.states[s]},{self.actions.label(a)},"
                             f"{self.states[s2]}")


class TabularEnv:
    def __init__(self, model: TabularModel, seed=None, rng: np.random.Generator | None = None):
        model.validate()
        self.model = model
        self.observations = model.observations
        self.actions = model.actions
        self.rewards = model.rewards
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.state = model.initial
        self._cumT = np.cumsum(model.T, axis=2)
        self._cumR = np.cumsum(model.Rdist, axis=3)

    def reset(self) -> int:
        self.state = self.model.initial
        return int(self.model.obs[self.state])

    def step(self, a: int) -> tuple[int, int]:
        return tabular_step(self, a)


def _draw(cum: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(cum) - 1)


def tabular_step(env: TabularEnv, a: int, rng: np.random.Generator | None = None) -> tuple[int, int]:
    rng = env.rng if rng is None else rng
    a = env.actions.check(a, "action")
    s = env.state
    s2 = _draw(env._cumT[s, a], float(rng.random()))
    r = _draw(env._cumR[s, a, s2], float(rng.random()))
    env.state = s2
    return int(env.model.obs[s2]), r


# --- environment file format ------------------------------------------------
#
# [states]        one hidden state name per line; the first is the start state
# [transitions]   s,a,s',prob
# [obs]           s,o
# [rewards]       s,a,s',r[,prob]   (prob defaults to 1)
#
# Action, observation and reward alphabets are the labels used, in order of
# first appearance; reward labels must be numbers.

SECTIONS = ("states", "transitions", "obs", "rewards")


def parse_env(text: str, path=None) -> TabularModel:
    sections: dict[str, list[tuple[int, list[str]]]] = {k: [] for k in SECTIONS}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if not line.endswith("]") or name not in SECTIONS:
                raise EnvFileError(f"unknown section header {line!r}", lineno, path)
            current = name
            continue
        if current is None:
            raise EnvFileError("content before the first section header", lineno, path)
        sections[current].append((lineno, [f.strip() for f in line.split(",")]))

    states: list[str] = []
    for lineno, fields in sections["states"]:
        if len(fields) != 1 or not fields[0]:
            raise EnvFileError("expected one state name", lineno, path)
        if fields[0] in states:
            raise EnvFileError(f"duplicate state {fields[0]!r}", lineno, path)
        states.append(fields[0])
    if not states:
        raise EnvFileError("no [states] declared", None, path)
    sidx = {s: i for i, s in enumerate(states)}

    def state(name, lineno):
        try:
            return sidx[name]
        except KeyError:
            raise EnvFileError(f"unknown state {name!r}", lineno, path) from None

    def prob(text_, lineno):
        try:
            p = float(text_)
        except ValueError:
            raise EnvFileError(f"bad probability {text_!r}", lineno, path) from None
        if not 0.0 <= p <= 1.0:
            raise EnvFileError(f"probability {p} outside [0, 1]", lineno, path)
        return p

    actions: list[str] = []
    trans = []
    for lineno, fields in sections["transitions"]:
        if len(fields) != 4:
            raise EnvFileError("transition lines need s,a,s',prob", lineno, path)
        s, a, s2, p = fields
        if a not in actions:
            actions.append(a)
        trans.append((state(s, lineno), a, state(s2, lineno), prob(p, lineno), lineno))
    if not actions:
        raise EnvFileError("no [transitions] declared", None, path)

    obs_labels: list[str] = []
    obs_of: dict[int, str] = {}
    for lineno, fields in sections["obs"]:
        if len(fields) != 2:
            raise EnvFileError("observation lines need s,o", lineno, path)
        s = state(fields[0], lineno)
        if s in obs_of:
            raise EnvFileError(f"observation for {fields[0]!r} given twice", lineno, path)
        obs_of[s] = fields[1]
        if fields[1] not in obs_labels:
            obs_labels.append(fields[1])
    missing = [states[i] for i in range(len(states)) if i not in obs_of]
    if missing:
        raise EnvFileError(f"no observation for states {missing}", None, path)

    reward_labels: list[str] = []
    rew = []
    for lineno, fields in sections["rewards"]:
        if len(fields) not in (4, 5):
            raise EnvFileError("reward lines need s,a,s',r[,prob]", lineno, path)
        s, a, s2, r = fields[:4]
        p = prob(fields[4], lineno) if len(fields) == 5 else 1.0
        try:
            float(r)
        except ValueError:
            raise EnvFileError(f"reward {r!r} is not a number", lineno, path) from None
        if a not in actions:
            raise EnvFileError(f"unknown action {a!r}", lineno, path)
        if r not in reward_labels:
            reward_labels.append(r)
        rew.append((state(s, lineno), a, state(s2, lineno), r, p, lineno))
    if not reward_labels:
        reward_labels = ["0"]

    O = Alphabet(tuple(obs_labels))
    A = Alphabet(tuple(actions))
    R = Alphabet(tuple(reward_labels), tuple(float(x) for x in reward_labels))
    S = len(states)
    T = np.zeros((S, A.size, S))
    for s, a, s2, p, lineno in trans:
        T[s, A.index(a), s2] += p
    Rdist = np.zeros((S, A.size, S, R.size))
    for s, a, s2, r, p, lineno in rew:
        Rdist[s, A.index(a), s2, R.index(r)] += p
    # transitions with no reward line pay the reward labelled 0 if there is one
    unset = Rdist.sum(axis=3) == 0
    if np.any(unset & (T > 0)):
        if "0" not in reward_labels:
            s, a, s2 = np.argwhere(unset & (T > 0))[0]
            raise EnvFileError(f"no reward for {states[s]},{A.label(a)},{states[s2]}", None, path)
        Rdist[unset, R.index("0")] = 1.0

    model = TabularModel(tuple(states), O, A, R, T, np.array([O.index(obs_of[i]) for i in range(S)]),
                         Rdist)
    try:
        model.validate()
    except ValueError as e:
        raise EnvFileError(str(e), None, path) from None
    return model


def load_env_file(path) -> TabularModel:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise EnvFileError(f"cannot open environment file: {e.strerror}", None, path) from None
    return parse_env(text, path)


def format_env(model: TabularModel) -> str:
    lines = ["[states]"] + list(model.states)
    lines.append("[transitions]")
    for s, a, s2 in zip(*np.nonzero(model.T)):
        lines.append(f"{model.states[s]},{model.actions.label(a)},{model.states[s2]},{float(model.T[s, a, s2])!r}")
    lines.append("[obs]")
    for i, s in enumerate(model.states):
        lines.append(f"{s},{model.observations.label(model.obs[i])}")
    lines.append("[rewards]")
    for s, a, s2, r in zip(*np.nonzero(model.Rdist)):
        if model.T[s, a, s2] > 0:
            lines.append(f"{model.states[s]},{model.actions.label(a)},{model.states[s2]},"
                         f"{model.rewards.label(r)},{float(model.Rdist[s, a, s2, r])!r}")
    return "\n".join(lines) + "\n"


# --- fixtures -----------------------------------------------------------------

def flip_model() -> TabularModel:
    """Two states swapped by the single action; the observation is the state."""
    return parse_env("""
[states]
0
1
[transitions]
0,flip,1,1
1,flip,0,1
[obs]
0,0
1,1
[rewards]
0,flip,1,0
1,flip,0,0
""")


def chain_model(length: int = 5, home_reward: float = 0.1, goal_reward: float = 1.0) -> TabularModel:
    """A corridor: ``right`` advances one cell, ``left`` returns to the start.

    ``left`` pays a small reward, entering (or staying in) the last cell via
    ``right`` pays the goal reward, everything else pays 0.  A greedy agent
    that tries ``left`` first never learns the goal exists.
    """
    last = length - 1
    lines = ["[states]"] + [str(i) for i in range(length)] + ["[transitions]"]
    for i in range(length):
        lines.append(f"{i},left,0,1")
        lines.append(f"{i},right,{min(i + 1, last)},1")
    lines.append("[obs]")
    lines += [f"{i},{i}" for i in range(length)]
    lines.append("[rewards]")
    home = _fmt(home_reward)
    goal = _fmt(goal_reward)
    for i in range(length):
        lines.append(f"{i},left,0,{home}")
        lines.append(f"{i},right,{min(i + 1, last)},{goal if i + 1 >= last else 0}")
    return parse_env("\n".join(lines))


def bandit_model(p=(0.2, 0.8)) -> TabularModel:
    """Bernoulli arms; the hidden state (and observation) is the arm last pulled."""
    k = len(p)
    lines = ["[states]"] + [f"arm{i}" for i in range(k)] + ["[transitions]"]
    for s in range(k):
        for a in range(k):
            lines.append(f"arm{s},{a},arm{a},1")
    lines.append("[obs]")
    lines += [f"arm{i},{i}" for i in range(k)]
    lines.append("[rewards]")
    for s in range(k):
        for a in range(k):
            lines.append(f"arm{s},{a},arm{a},0,{1 - p[a]!r}")
            lines.append(f"arm{s},{a},arm{a},1,{p[a]!r}")
    return parse_env("\n".join(lines))


def single_state_bandit_model(p=(0.2, 0.8)) -> TabularModel:
    """Bernoulli arms behind one hidden state with a constant observation."""
    lines = ["[states]", "s", "[transitions]"]
    lines += [f"s,{a},s,1" for a in range(len(p))]
    lines += ["[obs]", "s,0", "[rewards]"]
    for a, pa in enumerate(p):
        lines.append(f"s,{a},s,0,{1 - pa!r}")
        lines.append(f"s,{a},s,1,{pa!r}")
    return parse_env("\n".join(lines))


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


BUILTIN = {
    "flip": flip_model,
    "chain": chain_model,
    "bandit": bandit_model,
    "bandit1": single_state_bandit_model,
}


def make_env(spec: str, seed=None, rng: np.random.Generator | None = None):
    """Build an environment from ``tiny``, a builtin fixture name, or ``file:<path>``."""
    if spec == "tiny":
        return TinyExampleEnv(seed, rng)
    if spec.startswith("file:"):
        return TabularEnv(load_env_file(spec[len("file:"):]), seed, rng)
    if spec in BUILTIN:
        return TabularEnv(BUILTIN[spec](), seed, rng)
    raise ValueError(f"unknown environment {spec!r}; use tiny, file:<path> or one of {sorted(BUILTIN)}")
