"""Discounted value iteration on an estimated MDP."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .estimate import MdpEstimate
from .features import state_label


class NotStochastic(ValueError):
    pass


@dataclass
class ValueSolution:
    states: list
    V: np.ndarray
    Q: np.ndarray
    gamma: float
    iterations: int
    residual: float
    converged: bool
    residuals: list = field(default_factory=list, repr=False)

    def index(self, s) -> int:
        for i, x in enumerate(self.states):
            if x == s and type(x) is type(s):
                return i
        raise KeyError(f"state {s!r} unknown to this solution")

    def value_of(self, s) -> float:
        return float(self.V[self.index(s)])

    def to_csv(self, observations=None) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        nA = self.Q.shape[1]
        w.writerow(["s", "V"] + [f"Q{a}" for a in range(nA)])
        for i, s in enumerate(self.states):
            w.writerow([state_label(s, observations), repr(float(self.V[i]))]
                       + [repr(float(q)) for q in self.Q[i]])
        return out.getvalue()


def _check_rows(T: np.ndarray, atol: float = 1e-9):
    sums = T.sum(axis=2)
    bad = ~(np.isclose(sums, 1.0, atol=atol) | (sums == 0.0))
    if np.any(T < 0) or np.any(bad):
        s, a = np.argwhere(bad | np.any(T < 0, axis=2))[0]
        raise NotStochastic(f"transition row (state {s}, action {a}) sums to {sums[s, a]!r}")


def value_iteration(mdp: MdpEstimate, tol: float = 1e-6, max_iter: int = 100_000,
                    V0: np.ndarray | None = None) -> ValueSolution:
    """Synchronous sweeps until the returned V is within ``tol`` of the fixed point.

    The stopping rule uses the standard a-posteriori bound
    |V - V*| <= gamma/(1-gamma) * residual, and additionally requires the last
    sweep's change to be at most ``tol``.  All-zero rows (unvisited pairs of
    an unextended estimate) are allowed and act as terminal.
    """
    gamma = float(mdp.gamma)
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {gamma}")
    T = np.asarray(mdp.T, dtype=float)
    _check_rows(T)
    Rz = np.nan_to_num(np.asarray(mdp.R, dtype=float), nan=0.0)
    # Q = sum_s' T (R + gamma V); unrealized reward cells read as 0
    r_exp = np.einsum("ijk,ijk->ij", T, Rz)
    threshold = tol if gamma == 0.0 else tol * min(1.0, (1.0 - gamma) / gamma)

    V = np.zeros(mdp.n_states) if V0 is None else np.array(V0, dtype=float)
    Q = r_exp + gamma * (T @ V)
    residual = np.inf
    residuals = []
    it = 0
    while it < max_iter:
        V_new = Q.max(axis=1)
        residual = float(np.abs(V_new - V).max()) if len(V) else 0.0
        residuals.append(residual)
        V = V_new
        it += 1
        Q = r_exp + gamma * (T @ V)
        if residual <= threshold:
            break
    V = Q.max(axis=1) if len(V) else V
    return ValueSolution(list(mdp.states), V, Q, gamma, it, residual, residual <= threshold, residuals)


def greedy_action(sol: ValueSolution, s) -> int:
    """argmax_a Q[s, a]; the lowest action index wins ties."""
    return int(np.argmax(sol.Q[sol.index(s)]))
