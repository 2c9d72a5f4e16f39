"""Feature reinforcement learning: choose a history-to-state map by code length, then plan on the induced MDP."""

from .agent import AgentConfig, AgentState, agent_step, run_episode
from .coding import CostBreakdown, best_phi, code_length, cost, reward_code, state_code
from .envs import TabularEnv, TinyExampleEnv, make_env
from .estimate import (CountTensor, MdpEstimate, accumulate, estimate_R, estimate_T,
                       extend_for_exploration)
from .features import EXPLORE, ContextTreeMap, KOrderMap, random_neighbor
from .history import Alphabet, History, parse_trace, read_trace, write_trace
from .icost import ICostResult, icost, parameter_count, reward_likelihood
from .planner import ValueSolution, greedy_action, value_iteration
from .search import SearchConfig, anneal, phi_improve

__version__ = "0.1.0"
