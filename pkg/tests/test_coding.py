import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phimdp.coding import (best_phi, code_length, code_lengths, cost, cost_from_ids, cost_of_counts,
                           cost_of_tables, log2_binom, reward_code, state_code, support_cost_of_counts,
                           transition_tables)
from phimdp.estimate import CountTensor, accumulate, index_states
from phimdp.features import ContextTreeMap, KOrderMap

from conftest import random_history, tiny_history


def cl_oracle(counts):
    """n*H(counts/n) + (m'-1)/2 log2 n from the entropy definition."""
    n = sum(counts)
    if n == 0:
        return 0.0
    H = -sum(c / n * math.log2(c / n) for c in counts if c > 0)
    m_prime = sum(1 for c in counts if c > 0)
    return n * H + (m_prime - 1) / 2 * math.log2(n)


@pytest.mark.parametrize("counts,bits", [((0, 0), 0.0), ((4, 0), 0.0), ((2, 2), 5.0),
                                         ((3, 1), 4.245112497836531)])
def test_code_length_examples(counts, bits):
    assert code_length(counts) == pytest.approx(bits, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=8))
def test_code_length_matches_entropy_oracle(counts):
    assert code_length(counts) == pytest.approx(cl_oracle(counts), abs=1e-9)


def test_code_lengths_large_path_matches_small():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 50, size=(300, 8)) * (rng.random((300, 8)) < 0.6)
    big = code_lengths(c)  # above the small-array cutoff
    assert np.allclose(big, [cl_oracle(list(r)) for r in c], atol=1e-9)
    assert np.allclose(code_lengths(c, 8), big + [log2_binom(8, int(np.count_nonzero(r))) if r.any() else 0.0
                                                   for r in c], atol=1e-9)


def test_code_length_rejects_negative():
    with pytest.raises(ValueError):
        code_length([1, -1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=2, max_size=6), st.randoms(use_true_random=False),
       st.integers(1, 20))
def test_code_length_permutation_and_scaling(counts, rnd, k):
    perm = list(counts)
    rnd.shuffle(perm)
    assert code_length(perm) == pytest.approx(code_length(counts), abs=1e-9)
    n = sum(counts)
    if n:
        H = cl_oracle(counts) - (sum(c > 0 for c in counts) - 1) / 2 * math.log2(n)
        m_prime = sum(c > 0 for c in counts)
        scaled = k * H + (m_prime - 1) / 2 * math.log2(k * n)
        assert code_length([k * c for c in counts]) == pytest.approx(scaled, rel=1e-9, abs=1e-9)


def tensor(states, entries, nA=1, nR=1):
    m = len(states)
    counts = np.zeros((m, nA, m, nR), dtype=np.int64)
    for (s, a, s2, r), c in entries.items():
        counts[states.index(s), a, states.index(s2), r] = c
    return CountTensor(states, counts, np.arange(nR, dtype=float))


def test_state_code_examples():
    assert state_code(tensor(["A"], {("A", 0, "A", 0): 8})) == 0.0
    c = tensor(["A", "B"], {("A", 0, "A", 0): 2, ("A", 0, "B", 0): 2, ("B", 0, "A", 0): 4})
    assert state_code(c) == pytest.approx(5.0, abs=1e-12)
    assert state_code(tensor([], {})) == 0.0


def test_reward_code_examples():
    deterministic = tensor(["A", "B"], {("A", 0, "B", 1): 3, ("B", 0, "A", 0): 3, ("B", 0, "B", 1): 2}, nR=2)
    assert reward_code(deterministic) == 0.0
    c = tensor(["A"], {("A", 0, "A", 0): 2, ("A", 0, "A", 1): 2}, nR=2)
    assert reward_code(c) == pytest.approx(5.0, abs=1e-12)
    assert reward_code(tensor([], {}, nR=2)) == 0.0


def test_cost_phi0_tiny():
    h = tiny_history(4096, seed=0)
    c = cost(ContextTreeMap.root(2), h)
    assert c.state_bits == 0.0
    rewards = np.bincount(h.rewards, minlength=4)
    assert c.reward_bits == pytest.approx(cl_oracle(list(rewards)), abs=1e-9)
    assert c.total == c.state_bits + c.reward_bits


def test_cost_phi2_tiny_near_asymptotic():
    n = 4096
    total = cost(KOrderMap(2), tiny_history(n, seed=1)).total
    assert abs(total - (n + 6 * math.log2(n / 4))) / (n + 6 * math.log2(n / 4)) < 0.02


def test_cost_length_one_history_is_zero():
    h = tiny_history(1)
    for phi in (KOrderMap(0), KOrderMap(3), ContextTreeMap.full(2, 2)):
        assert tuple(cost(phi, h)) == (0.0, 0.0, 0.0)


def test_best_phi_tiny():
    h = tiny_history(4096, seed=2)
    phis = [KOrderMap(0), KOrderMap(1), KOrderMap(2)]
    assert best_phi(phis, h) is phis[2]
    assert best_phi([phis[1]], h) is phis[1]


def test_best_phi_ties():
    h = tiny_history(500, seed=3)
    a, b = KOrderMap(2), ContextTreeMap.full(2, 2)
    assert best_phi([a, b], h) is a
    assert best_phi([b, a], h) is b
    with pytest.raises(ValueError):
        best_phi([], h)


def test_cost_invariant_under_relabelling():
    rng = np.random.default_rng(4)
    h = random_history(rng, 300, nO=3, nA=2, nR=3)
    c = accumulate(KOrderMap(2), h)
    perm = rng.permutation(c.m)
    counts = c.counts[perm][:, :, perm]
    relabelled = CountTensor([c.states[i] for i in perm], counts, c.reward_values)
    assert cost_of_counts(relabelled).total == pytest.approx(cost_of_counts(c).total, abs=1e-9)


def test_one_state_map_has_no_state_bits():
    rng = np.random.default_rng(5)
    assert cost(KOrderMap(0), random_history(rng, 1000, 3, 3, 3)).state_bits == 0.0


def test_adding_one_transition_bounded_change():
    rng = np.random.default_rng(6)
    for _ in range(20):
        h = random_history(rng, int(rng.integers(5, 300)), 2, 2, 3)
        phi = KOrderMap(int(rng.integers(0, 3)))
        before = cost(phi, h).total
        h2 = h.append(int(rng.integers(2)), int(rng.integers(3)), int(rng.integers(2)))
        c2 = accumulate(phi, h2)
        bound = math.log2(h.n + 1) * (1 + c2.m * 2)
        assert abs(cost_of_counts(c2).total - before) <= bound


def test_support_cost_adds_binomial_terms():
    rng = np.random.default_rng(7)
    h = random_history(rng, 400, 2, 2, 3)
    c = accumulate(KOrderMap(2), h)
    base = cost_of_counts(c)
    sup = support_cost_of_counts(c)
    rows = c.sa_s.reshape(-1, c.m)
    extra_s = sum(log2_binom(c.m, int(np.count_nonzero(r))) for r in rows if r.any())
    extra_r = sum(log2_binom(3, int(np.count_nonzero(r))) for r in c.dest_reward if r.any())
    assert sup.state_bits == pytest.approx(base.state_bits + extra_s, abs=1e-9)
    assert sup.reward_bits == pytest.approx(base.reward_bits + extra_r, abs=1e-9)


def test_support_makes_singleton_rows_cost_something():
    c = tensor(["A", "B", "C"], {("A", 0, "B", 0): 1, ("B", 0, "C", 0): 1})
    assert cost_of_counts(c).total == 0.0
    assert support_cost_of_counts(c).total > 0.0


@pytest.mark.parametrize("support", [False, True])
def test_table_paths_match_count_tensor(support):
    rng = np.random.default_rng(8)
    h = random_history(rng, 600, 3, 2, 2)
    phi = ContextTreeMap.full(2, 3)
    states, sid = index_states(phi.state_sequence(h.observations))
    # pad with unused labels: they must not change the cost
    L = len(states) + 3
    tab = transition_tables(sid, L, h.actions, h.rewards, 2, 2)
    c = accumulate(phi, h)
    ref = support_cost_of_counts(c) if support else cost_of_counts(c)
    got = cost_of_tables(tab, support)
    assert got.state_bits == pytest.approx(ref.state_bits, abs=1e-9)
    assert got.reward_bits == pytest.approx(ref.reward_bits, abs=1e-9)
    assert cost_from_ids(sid, L, h.actions, h.rewards, 2, 2, support).total == pytest.approx(ref.total, abs=1e-9)
    assert cost_from_ids(sid[:1], L, h.actions[:0], h.rewards[:0], 2, 2).total == 0.0
