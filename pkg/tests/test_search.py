import numpy as np
import pytest

from phimdp.coding import cost, support_cost_of_counts
from phimdp.estimate import accumulate
from phimdp.features import ContextTreeMap, is_complete, is_suffix_free
from phimdp.icost import icost
from phimdp.search import Chain, SearchConfig, accepts, anneal, criterion_fn, phi_improve

from conftest import random_history, tiny_history


def test_accepts_rule():
    rng = np.random.default_rng(0)
    for q in 1.0 - rng.random(1000):
        assert accepts(10.0, 9.5, q)  # improvement always passes
    assert accepts(10.0, 9.99, 1.0)
    assert not accepts(10.0, 10.0, 1.0)
    assert not accepts(10.0, 10.5, 1.0)


def acceptance_rate(delta_bits, proposals, seed):
    """Fraction of split proposals accepted when a split costs ``delta_bits`` more."""
    h = tiny_history(3, seed=0)
    calls = []

    def fn(phi, _h):
        calls.append(1)
        return delta_bits * (len(phi) - 1)

    rng = np.random.default_rng(seed)
    root = ContextTreeMap.root(2)
    accepted = 0
    while len(calls) < 2 * proposals:
        accepted += phi_improve(root, h, rng, cost_fn=fn) != root
    return accepted / proposals


def test_one_bit_worse_accepted_half_the_time():
    assert abs(acceptance_rate(1.0, 10_000, seed=1) - 0.5) <= 0.02


@pytest.mark.parametrize("delta", [0.5, 2.0, 3.0])
def test_metropolis_rate_is_two_to_minus_delta(delta):
    n = 10_000
    p = 2.0 ** -delta
    rate = acceptance_rate(delta, n, seed=int(delta * 10))
    assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_anneal_zero_iterations_returns_phi0():
    h = tiny_history(200)
    phi0 = ContextTreeMap.full(1, 2)
    res = anneal(phi0, h, SearchConfig(iterations=0))
    assert res.best == phi0 and len(res.costs) == 0


def test_anneal_incumbent_monotone_and_valid():
    h = tiny_history(1000, seed=2)
    res = anneal(ContextTreeMap.root(2), h, SearchConfig(iterations=200, seed=3))
    assert np.all(np.diff(res.best_costs) <= 0)
    assert res.best_cost == pytest.approx(cost(res.best, h).total, abs=1e-6)
    assert res.best_cost <= res.costs.min() + 1e-12
    for phi in (res.best, res.final):
        assert is_suffix_free(phi.suffixes) and is_complete(phi.suffixes, 2)
    log = res.log_csv().splitlines()
    assert log[0] == "iter,cost,accepted" and len(log) == 201


def test_anneal_deterministic():
    h = tiny_history(500, seed=4)
    a = anneal(ContextTreeMap.root(2), h, SearchConfig(iterations=100, seed=9))
    b = anneal(ContextTreeMap.root(2), h, SearchConfig(iterations=100, seed=9))
    assert a.best == b.best and np.array_equal(a.costs, b.costs) and np.array_equal(a.accepted, b.accepted)


def test_anneal_icost_criterion():
    h = tiny_history(300, seed=5)
    res = anneal(ContextTreeMap.root(2), h, SearchConfig(iterations=30, criterion="icost", seed=1))
    assert res.best_cost == pytest.approx(icost(res.best, h).total, abs=1e-6)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(iterations=-1)
    with pytest.raises(ValueError):
        SearchConfig(criterion="bits")


@pytest.mark.parametrize("criterion", ["cost", "cost+support", "icost"])
def test_chain_incremental_matches_full_recomputation(criterion):
    rng = np.random.default_rng(6)
    h = random_history(rng, 400, nO=3, nA=2, nR=3)
    chain = Chain(ContextTreeMap.root(3), h, criterion)
    fn = criterion_fn(criterion)
    steps = 60 if criterion != "icost" else 15
    for _ in range(steps):
        chain.step(rng)
        assert chain.value == pytest.approx(fn(chain.phi, h), abs=1e-6)
    fresh = Chain(chain.phi, h, criterion)
    assert chain.value == pytest.approx(fresh.value, abs=1e-6)
    states, tab = chain.live_table()
    ref = accumulate(chain.phi, h)
    assert sorted(map(str, states)) == sorted(map(str, ref.states))
    assert chain.counts().total == ref.total


def test_chain_extend_matches_refresh():
    rng = np.random.default_rng(7)
    h = random_history(rng, 300, nO=2, nA=2, nR=2)
    chain = Chain(ContextTreeMap.root(2), h.prefix(50), "cost+support")
    for t in range(51, 301):
        if t % 7 == 0:
            chain.improve(rng, 3)
        chain.table  # materialize so extend updates incrementally
        chain.extend(h.prefix(t))
    value = chain.value
    table = chain.live_table()
    chain.refresh()
    assert value == pytest.approx(chain.value, abs=1e-9)
    assert table[0] == chain.live_table()[0] and np.array_equal(table[1], chain.live_table()[1])
    assert value == pytest.approx(support_cost_of_counts(accumulate(chain.phi, h)).total, abs=1e-6)
    assert chain.current_state() == chain.phi.lookup(h.observations)


def test_improve_keep_best_ends_on_cheapest():
    rng = np.random.default_rng(8)
    h = tiny_history(800, seed=8)
    chain = Chain(ContextTreeMap.root(2), h, "cost+support")
    start = chain.value
    chain.improve(rng, 40, keep_best=True)
    assert chain.value <= start + 1e-12
    assert chain.value == pytest.approx(support_cost_of_counts(accumulate(chain.phi, h)).total, abs=1e-6)


def test_phi_improve_only_touches_realized_states():
    # history never shows the context "1", so only "0" can be drawn
    h = random_history(np.random.default_rng(9), 50, nO=2)
    obs = np.zeros(50, dtype=np.int64)
    from phimdp.history import History
    h = History.from_arrays(h.observations_alphabet, h.actions_alphabet, h.rewards_alphabet, obs,
                            h.actions, h.rewards)
    phi = ContextTreeMap.full(1, 2)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        new = phi_improve(phi, h, rng, cost_fn=lambda p, _h: 0.0 if len(p) != 2 else 1.0)
        seen |= set(new.suffixes) - set(phi.suffixes)
    assert seen <= {(0, 0), (1, 0), ()}
