"""The online agent: improve the feature map, estimate, plan, act."""

from __future__ import annotations

import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._kernels import plan
from .estimate import EXPLORE
from .features import ContextTreeMap
from .history import History
from .planner import ValueSolution
from .search import CRITERIA, Chain

log = logging.getLogger(__name__)

METRIC_FIELDS = ("n", "avg_reward_window", "states", "cost_bits", "gamma", "Rmax_e")


def parse_gamma_schedule(rule: str):
    """``default`` gives 1 - 1/(n+1); ``fixed:<g>`` a constant discount."""
    if rule == "default":
        return lambda n: 1.0 - 1.0 / (n + 1)
    if rule.startswith("fixed:"):
        try:
            g = float(rule.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad discount in schedule {rule!r}") from None
        if not 0.0 <= g < 1.0:
            raise ValueError(f"fixed discount must lie in [0, 1), got {g}")
        return lambda n: g
    raise ValueError(f"unknown gamma schedule {rule!r}; use 'default' or 'fixed:<gamma>'")


@dataclass
class AgentConfig:
    improve_iters_per_step: int = 10
    gamma_schedule: str = "default"
    rmax_poly_coeff: float = 1.0
    seed: int = 0
    criterion: str = "cost+support"
    keep_best: bool = True
    explore: bool = True
    plan_tol: float = 1e-6
    plan_max_iter: int = 1000
    reward_window: int = 100

    def __post_init__(self):
        if self.improve_iters_per_step < 0:
            raise ValueError("improve_iters_per_step must be nonnegative")
        if not self.rmax_poly_coeff > 0:
            raise ValueError("rmax_poly_coeff must be positive")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        parse_gamma_schedule(self.gamma_schedule)


@dataclass
class AgentState:
    observations: object
    actions: object
    rewards: object
    rng: np.random.Generator
    phi: ContextTreeMap
    history: History | None = None
    n: int = 0
    chain: Chain | None = None
    realized: set = field(default_factory=set)
    last_action: int | None = None
    solution: ValueSolution | None = None
    gamma: float = 0.0
    rmax_e: float = 0.0
    V_cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self._reward_values = np.asarray(self.rewards.value_array, dtype=float)
        self._max_reward = float(np.max(self._reward_values))

    @classmethod
    def initial(cls, env, cfg: AgentConfig, rng: np.random.Generator | None = None) -> "AgentState":
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        phi = ContextTreeMap.root(env.observations.size)
        return cls(env.observations, env.actions, env.rewards, rng, phi, realized={()})

    @property
    def current_state(self):
        return self.chain.current_state() if self.chain is not None else ()


def rmax_bonus(cfg: AgentConfig, gamma: float, n_states: int, n_actions: int, max_reward: float) -> float:
    # degree one in (1-gamma)^-1 and |S x A|
    scale = max_reward if max_reward > 0 else 1.0
    return cfg.rmax_poly_coeff * n_states * n_actions * scale / (1.0 - gamma)


def _warm_value(cache: dict, s) -> float:
    """Previous value of s, or of its nearest cached relative after a split/merge."""
    if s in cache:
        return cache[s]
    if s is EXPLORE:
        return 0.0
    for L in range(len(s) - 1, -1, -1):
        v = cache.get(s[len(s) - L:])
        if v is not None:
            return v
    for t, v in cache.items():
        if len(t) > len(s) and t[len(t) - len(s):] == s:
            return v
    return 0.0


def agent_step(st: AgentState, o_next: int, cfg: AgentConfig, reward: int | None = None) -> int:
    """Take in o_{n+1} (and r_n for n >= 1) and return a_{n+1}."""
    gamma = parse_gamma_schedule(cfg.gamma_schedule)(st.n)

    if st.history is None:
        st.history = History.start(st.observations, st.actions, st.rewards, o_next)
        st.chain = Chain(st.phi, st.history, cfg.criterion)
    else:
        if reward is None:
            raise ValueError("the reward for the previous action is required after the first step")
        # the improve budget runs on h_n, before o_{n+1} is appended
        st.chain.improve(st.rng, cfg.improve_iters_per_step, cfg.keep_best)
        st.history = st.history.append(st.last_action, reward, o_next)
        st.chain.extend(st.history)
    st.phi = st.chain.phi

    s_now = st.chain.current_state()
    states, tab = st.chain.live_table()
    st.realized = set(states)
    st.realized.add(s_now)

    n_actions = st.actions.size
    st.gamma = gamma
    st.rmax_e = rmax_bonus(cfg, gamma, len(st.realized), n_actions, st._max_reward)
    if log.isEnabledFor(logging.DEBUG):
        log.debug("n=%d phi=%s states=%d", st.n, st.phi, len(st.realized))

    if n_actions == 1:
        # nothing to choose; skip planning
        action = 0
        st.solution = None
    else:
        if cfg.explore:
            states = states + [EXPLORE]
        V0 = np.array([_warm_value(st.V_cache, s) for s in states])
        if cfg.explore:
            V0[-1] = st.rmax_e / (1.0 - gamma)  # closed form for the absorbing state
        scale = max(1.0, st.rmax_e / (1.0 - gamma)) if cfg.explore else 1.0
        # same estimate and sweeps as value_iteration(extend_for_exploration(...)), compiled
        V, Q, iters, residual = plan(tab, st._reward_values, gamma, st.rmax_e, cfg.explore,
                                     V0, cfg.plan_tol * scale, cfg.plan_max_iter)
        tol = cfg.plan_tol * scale
        threshold = tol if gamma == 0.0 else tol * min(1.0, (1.0 - gamma) / gamma)
        sol = ValueSolution(states, V, Q, gamma, iters, residual, residual <= threshold)
        st.V_cache = dict(zip(states[:-1] if cfg.explore else states, V.tolist()))
        st.solution = sol
        action = int(np.argmax(Q[states.index(s_now)]))
        if log.isEnabledFor(logging.DEBUG):
            log.debug("n=%d V=%s a=%d", st.n, np.round(V, 3), action)

    st.last_action = action
    st.n += 1
    return action


@dataclass
class EpisodeResult:
    history: History
    metrics: list
    final_phi: ContextTreeMap
    costs: np.ndarray

    def trace_csv(self) -> str:
        from .history import format_trace
        return format_trace(self.history)

    def metrics_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for row in self.metrics:
            w.writerow([row[0], repr(row[1]), row[2], repr(row[3]), repr(row[4]), repr(row[5])])
        return out.getvalue()

    def average_reward(self, start: int, stop: int) -> float:
        """Mean reward value over 1-based steps start..stop inclusive."""
        vals = self.history.reward_values()
        return float(np.mean(vals[start - 1: stop]))

    def phi_text(self) -> str:
        from .features import format_suffix_set
        return format_suffix_set(self.final_phi, self.history.observations_alphabet)


def run_episode(env, steps: int, cfg: AgentConfig, rng: np.random.Generator | None = None,
                stop=None) -> EpisodeResult:
    """Run ``steps`` full observe-improve-plan-act-reward cycles.

    ``stop(o, r)``, if given, ends the episode early after the first step
    for which it returns true.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    st = AgentState.initial(env, cfg, rng)
    window: deque = deque(maxlen=cfg.reward_window)
    metrics = []
    costs = np.empty(steps)
    values = env.rewards.value_array

    window_sum = 0.0
    a = agent_step(st, env.reset(), cfg)
    for i in range(steps):
        o, r = env.step(a)
        if len(window) == window.maxlen:
            window_sum -= window[0]
        window.append(float(values[r]))
        window_sum += window[-1]
        costs[i] = st.chain.value
        metrics.append((i + 1, window_sum / len(window),
                        len(st.realized), float(costs[i]), st.gamma, st.rmax_e))
        if i + 1 < steps and not (stop is not None and stop(o, r)):
            a = agent_step(st, o, cfg, reward=r)
        else:
            st.history = st.history.append(a, r, o)
            costs = costs[: i + 1]
            break
    return EpisodeResult(st.history, metrics, st.phi, costs)




def run_seeded(env_spec: str, steps: int, cfg: AgentConfig, stop=None) -> EpisodeResult:
    """Run one episode whose env and agent streams both derive from ``cfg.seed``."""
    from .envs import make_env
    env_ss, agent_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    env = make_env(env_spec, rng=np.random.default_rng(env_ss))
    return run_episode(env, steps, cfg, np.random.default_rng(agent_ss), stop)
