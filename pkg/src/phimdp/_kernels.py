"""Compiled inner loops over state sequences, with numpy fallbacks."""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _tables_np(sid, act, rew, L, A, R):
    src, dst = sid[:-1], sid[1:]
    n = len(src)
    key = ((src * A + act[:n]) * L + dst) * R + rew[:n]
    return np.bincount(key, minlength=L * A * L * R)


def _split_np(sid, obs, id_s, depth, child_ids):
    idx = np.flatnonzero(sid == id_s)
    older = idx - depth
    ok = older >= 0
    new = sid.copy()
    new[idx[ok]] = child_ids[obs[older[ok]]]
    return new


def _tables_loop(sid, act, rew, L, A, R):
    tab = np.zeros(L * A * L * R, np.int64)
    for t in range(len(sid) - 1):
        tab[((sid[t] * A + act[t]) * L + sid[t + 1]) * R + rew[t]] += 1
    return tab


def _split_loop(sid, obs, id_s, depth, child_ids):
    new = sid.copy()
    # times before depth cannot see the extra symbol and keep id_s
    for t in range(depth, len(sid)):
        if sid[t] == id_s:
            new[t] = child_ids[obs[t - depth]]
    return new


def _log2_binom(k, j):
    return (math.lgamma(k + 1.0) - math.lgamma(j + 1.0) - math.lgamma(k - j + 1.0)) / math.log(2.0)


def _row_bits(n, clogc, m_prime):
    if m_prime == 0:
        return 0.0
    logn = math.log2(n)
    return n * logn - clogc + 0.5 * (m_prime - 1) * logn


def _table_bits_loop(tab, support):
    """(state bits, reward bits) of a dense (L, A, L, R) count array."""
    L, A, _, R = tab.shape
    m_live = 0
    if support:
        used = np.zeros(L, np.bool_)
        for s in range(L):
            for a in range(A):
                for s2 in range(L):
                    for r in range(R):
                        if tab[s, a, s2, r] > 0:
                            used[s] = True
                            used[s2] = True
        for s in range(L):
            if used[s]:
                m_live += 1
    state_bits = 0.0
    for s in range(L):
        for a in range(A):
            n = 0.0
            clogc = 0.0
            mp = 0
            for s2 in range(L):
                c = 0.0
                for r in range(R):
                    c += tab[s, a, s2, r]
                if c > 0:
                    n += c
                    clogc += c * math.log2(c)
                    mp += 1
            state_bits += _row_bits(n, clogc, mp)
            if support and mp > 0:
                state_bits += _log2_binom(m_live, mp)
    reward_bits = 0.0
    for s2 in range(L):
        n = 0.0
        clogc = 0.0
        mp = 0
        for r in range(R):
            c = 0.0
            for s in range(L):
                for a in range(A):
                    c += tab[s, a, s2, r]
            if c > 0:
                n += c
                clogc += c * math.log2(c)
                mp += 1
        reward_bits += _row_bits(n, clogc, mp)
        if support and mp > 0:
            reward_bits += _log2_binom(R, mp)
    return state_bits, reward_bits


def _plan_loop(tab, vals, gamma, rmax_e, explore, V0, tol, max_iter):
    """Estimate (optionally extended) and run value iteration in one pass.

    Mirrors estimate/extend_for_exploration followed by value_iteration;
    the exploration state, when present, is the last index.
    """
    m, A, _, R = tab.shape
    M = m + 1 if explore else m
    T = np.zeros((M, A, M))
    r_exp = np.zeros((M, A))
    for s in range(m):
        for a in range(A):
            n = 0.0
            rsum = 0.0
            for s2 in range(m):
                c = 0.0
                for r in range(R):
                    c += tab[s, a, s2, r]
                    rsum += tab[s, a, s2, r] * vals[r]
                T[s, a, s2] = c
                n += c
            if explore:
                n += 1.0
                T[s, a, m] = 1.0
                rsum += rmax_e
            if n > 0:
                for s2 in range(M):
                    T[s, a, s2] /= n
                r_exp[s, a] = rsum / n
    if explore:
        for a in range(A):
            T[m, a, m] = 1.0
            r_exp[m, a] = rmax_e
    threshold = tol if gamma == 0.0 else tol * min(1.0, (1.0 - gamma) / gamma)
    V = V0.copy()
    Q = np.empty((M, A))
    for s in range(M):
        for a in range(A):
            acc = 0.0
            for s2 in range(M):
                acc += T[s, a, s2] * V[s2]
            Q[s, a] = r_exp[s, a] + gamma * acc
    it = 0
    residual = np.inf
    while it < max_iter:
        residual = 0.0
        for s in range(M):
            best = Q[s, 0]
            for a in range(1, A):
                if Q[s, a] > best:
                    best = Q[s, a]
            d = abs(best - V[s])
            if d > residual:
                residual = d
            V[s] = best
        it += 1
        for s in range(M):
            for a in range(A):
                acc = 0.0
                for s2 in range(M):
                    acc += T[s, a, s2] * V[s2]
                Q[s, a] = r_exp[s, a] + gamma * acc
        if residual <= threshold:
            break
    for s in range(M):
        best = Q[s, 0]
        for a in range(1, A):
            if Q[s, a] > best:
                best = Q[s, a]
        V[s] = best
    return V, Q, it, residual


def _map_loop(sid, idmap):
    new = np.empty_like(sid)
    for t in range(len(sid)):
        new[t] = idmap[sid[t]]
    return new


def _propose_loop(sid, obs, act, rew, kind, id_s, depth, ids, L, A, R, support):
    """Relabelled sequence, its counts and its (state, reward) bits in one pass.

    kind 0 splits id_s using ``ids`` as child ids; kind 1 maps through ``ids``.
    """
    if kind == 0:
        new = _split(sid, obs, id_s, depth, ids)
    else:
        new = _map(sid, ids)
    flat = _tables(new, act, rew, L, A, R)
    tab = flat.reshape((L, A, L, R))
    sb, rb = _table_bits(tab, support)
    return new, tab, sb, rb


if njit is not None:
    _tables = njit(cache=True, nogil=True)(_tables_loop)
    _split = njit(cache=True, nogil=True)(_split_loop)
    _log2_binom = njit(cache=True)(_log2_binom)
    _row_bits = njit(cache=True)(_row_bits)
    _table_bits = njit(cache=True, nogil=True)(_table_bits_loop)
    _plan = njit(cache=True, nogil=True)(_plan_loop)
    _map = njit(cache=True, nogil=True)(_map_loop)
    _propose = njit(cache=True, nogil=True)(_propose_loop)
else:  # pragma: no cover
    _tables, _split = _tables_np, _split_np
    _table_bits, _plan = _table_bits_loop, _plan_loop
    _map, _propose = _map_loop, _propose_loop


def transition_counts(sid, act, rew, L: int, A: int, R: int) -> np.ndarray:
    """Flat bincount of (s_t, a_t, s_{t+1}, r_t) keys, length L*A*L*R."""
    return _tables(np.ascontiguousarray(sid, dtype=np.int64), np.ascontiguousarray(act, dtype=np.int64),
                   np.ascontiguousarray(rew, dtype=np.int64), L, A, R)


def split_relabel(sid, obs, id_s: int, depth: int, child_ids) -> np.ndarray:
    """Relabel times in state id_s by the symbol ``depth`` steps back."""
    return _split(np.ascontiguousarray(sid, dtype=np.int64), np.ascontiguousarray(obs, dtype=np.int64),
                  int(id_s), int(depth), np.ascontiguousarray(child_ids, dtype=np.int64))


def table_bits(tab: np.ndarray, support: bool = False) -> tuple[float, float]:
    """(state bits, reward bits) of a dense (L, A, L, R) count array."""
    return _table_bits(np.ascontiguousarray(tab, dtype=np.int64), bool(support))


def plan(tab: np.ndarray, reward_values, gamma: float, rmax_e: float, explore: bool,
         V0: np.ndarray, tol: float, max_iter: int):
    """Returns (V, Q, iterations, residual) over the realized states (+ EXPLORE)."""
    return _plan(np.ascontiguousarray(tab, dtype=np.int64), np.asarray(reward_values, dtype=float),
                 float(gamma), float(rmax_e), bool(explore), np.array(V0, dtype=float),
                 float(tol), int(max_iter))


def propose_tables(sid, obs, act, rew, kind: str, id_s: int, depth: int, ids, L: int, A: int, R: int,
                   support: bool):
    """Apply a split (``ids`` = child ids) or a relabel map and cost the result.

    Returns (new sid, (L, A, L, R) counts, state bits, reward bits).  The
    arrays must already be contiguous int64, as Chain keeps them.
    """
    return _propose(sid, obs, act, rew, 0 if kind == "split" else 1, int(id_s), int(depth),
                    np.asarray(ids, dtype=np.int64), L, A, R, bool(support))
