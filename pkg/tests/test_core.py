import itertools
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decmatch.core import (
    COLOR,
    FOOD,
    ENUMERATION_CAP,
    Market,
    Matching,
    agent_payoffs,
    blocking_pairs,
    classify_matching,
    deferred_acceptance,
    dumps_canonical,
    enumerate_stable_matchings,
    gini,
    is_stable,
    load_market,
    market_from_dict,
    market_to_dict,
    median_stable_matching,
    payoff_stats,
    save_market,
)
from decmatch.errors import DuplicatePayoff, EnumerationCapExceeded, InvalidMarket

from oracles import brute_blocking, brute_stable_set, knuth_market, matching, random_market


@st.composite
def markets(draw, max_n=6, square=True):
    n_f = draw(st.integers(1, max_n))
    n_c = n_f if square else draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_market(random.Random(seed), n_f, n_c)


# ---------------------------------------------------------- preferences


def test_knuth_preference_lists():
    prefs = knuth_market().preferences
    assert prefs.food_lists[0].tolist() == [0, 1]
    assert prefs.color_lists[0].tolist() == [1, 0]
    assert prefs.food_rank[1, 1] == 1 and prefs.color_rank[0, 0] == 2


def test_one_by_one_market():
    m = Market([[100]], [[100]])
    assert m.preferences.food_lists.tolist() == [[0]]
    assert m.preferences.color_lists.tolist() == [[0]]


def test_duplicate_payoff_rejected():
    with pytest.raises(DuplicatePayoff):
        Market([[300, 200, 200], [1, 2, 3], [4, 5, 6]], np.arange(1, 10).reshape(3, 3))


def test_nonpositive_payoff_rejected():
    with pytest.raises(InvalidMarket):
        Market([[0, 1], [2, 3]], [[1, 2], [3, 4]])


def test_rank_arrays_are_read_only():
    prefs = knuth_market().preferences
    with pytest.raises(ValueError):
        prefs.food_rank[0, 0] = 5


# ---------------------------------------------------------- blocking pairs


def test_knuth_blocking_pairs():
    K = knuth_market()
    assert blocking_pairs(K, matching([(0, 0)])) == {(1, 0), (1, 1)}
    assert blocking_pairs(K, matching([(0, 0), (1, 1)])) == frozenset()


@given(markets(square=False))
@settings(max_examples=60, deadline=None)
def test_empty_matching_blocked_everywhere(m):
    assert len(blocking_pairs(m, Matching.empty(m.n_f, m.n_c))) == m.n_f * m.n_c


@given(markets(), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_blocking_pairs_match_brute_force(m, rnd):
    perm = list(range(m.n_c))
    rnd.shuffle(perm)
    food = tuple(c if rnd.random() < 0.7 else -1 for c in perm[: m.n_f])
    assert blocking_pairs(m, Matching(food, m.n_c)) == brute_blocking(m, food)


def test_matching_involution_enforced():
    with pytest.raises(InvalidMarket):
        Matching((0, 0), 2)


# ---------------------------------------------------------------- DA


def test_knuth_da_both_sides():
    K = knuth_market()
    r = deferred_acceptance(K, FOOD)
    assert r.matching.food == (0, 1) and (r.offers_made, r.matches_formed) == (2, 2)
    r = deferred_acceptance(K, COLOR)
    assert r.matching.food == (1, 0) and (r.offers_made, r.matches_formed) == (2, 2)


def test_assortative_3x3_diagonal():
    pf = [[300, 200, 100]] * 3
    pc = [[300] * 3, [200] * 3, [100] * 3]
    m = Market(pf, pc)
    assert deferred_acceptance(m, FOOD).matching.food == (0, 1, 2)
    assert deferred_acceptance(m, COLOR).matching.food == (0, 1, 2)
    assert len(enumerate_stable_matchings(m)) == 1


@given(markets(max_n=8, square=False))
@settings(max_examples=150, deadline=None)
def test_da_is_stable_and_extremal(m):
    mf = deferred_acceptance(m, FOOD).matching
    mc = deferred_acceptance(m, COLOR).matching
    assert is_stable(m, mf) and is_stable(m, mc)
    uf_f, uc_f = agent_payoffs(m, mf)
    uf_c, uc_c = agent_payoffs(m, mc)
    assert all(a >= b for a, b in zip(uf_f, uf_c))
    assert all(a <= b for a, b in zip(uc_f, uc_c))


# ------------------------------------------------------------ enumeration


def test_knuth_two_stable_matchings():
    ss = enumerate_stable_matchings(knuth_market())
    assert [m.food for m in ss.matchings] == [(0, 1), (1, 0)]
    assert ss.food_partners == ((0, 1), (1, 0))


@given(markets(max_n=6))
@settings(max_examples=80, deadline=None)
def test_enumeration_equals_brute_force(m):
    ss = enumerate_stable_matchings(m)
    assert {x.food for x in ss.matchings} == brute_stable_set(m)
    assert len(set(ss.matchings)) == len(ss)
    assert ss.food_optimal == deferred_acceptance(m, FOOD).matching
    assert ss.color_optimal == deferred_acceptance(m, COLOR).matching


@given(markets(max_n=7))
@settings(max_examples=60, deadline=None)
def test_lattice_extremal_and_opposition(m):
    ss = enumerate_stable_matchings(m)
    pf, pc = m.payoff_f, m.payoff_c
    best, worst = ss.food_optimal, ss.color_optimal
    for mu in ss.matchings:
        for f in range(m.n_f):
            assert pf[f, best.food[f]] >= pf[f, mu.food[f]] >= pf[f, worst.food[f]]
        for c in range(m.n_c):
            assert pc[worst.color[c], c] >= pc[mu.color[c], c] >= pc[best.color[c], c]
    # food welfare order reverses color welfare order
    w = [(payoff_stats(m, mu).food_welfare, payoff_stats(m, mu).color_welfare) for mu in ss.matchings]
    for (a1, b1), (a2, b2) in itertools.combinations(w, 2):
        if a1 != a2 and b1 != b2 and _dominates_pointwise(m, ss, w.index((a1, b1)), w.index((a2, b2))):
            assert (a1 - a2) * (b1 - b2) < 0


def _dominates_pointwise(m, ss, i, j) -> bool:
    a, b = ss.matchings[i], ss.matchings[j]
    pf = m.payoff_f
    diffs = [pf[f, a.food[f]] - pf[f, b.food[f]] for f in range(m.n_f)]
    return all(d >= 0 for d in diffs) or all(d <= 0 for d in diffs)


def test_enumeration_cap():
    m = random_market(random.Random(0), ENUMERATION_CAP + 1)
    with pytest.raises(EnumerationCapExceeded):
        enumerate_stable_matchings(m)


def test_stable_partner_lists_consistent():
    rng = random.Random(11)
    for _ in range(40):
        m = random_market(rng, rng.randint(2, 7))
        ss = enumerate_stable_matchings(m)
        for f, parts in enumerate(ss.food_partners):
            assert set(parts) == {mu.food[f] for mu in ss.matchings}
            ranks = [m.preferences.food_rank[f, c] for c in parts]
            assert ranks == sorted(ranks)
            assert len(parts) <= len(ss)


# ----------------------------------------------------------------- median


def test_median_unique():
    m = Market([[300, 200], [200, 300]], [[300, 200], [200, 300]])
    ss = enumerate_stable_matchings(m)
    assert median_stable_matching(ss, m) == (ss.matchings[0],)


def test_median_even_k_returns_both():
    K = knuth_market()
    ss = enumerate_stable_matchings(K)
    assert set(median_stable_matching(ss, K)) == set(ss.matchings)


@given(markets(max_n=8))
@settings(max_examples=80, deadline=None)
def test_median_is_member(m):
    ss = enumerate_stable_matchings(m)
    for med in median_stable_matching(ss, m):
        assert med in ss


# ---------------------------------------------------------- classification


def test_classify_knuth():
    K = knuth_market()
    ss = enumerate_stable_matchings(K)
    assert classify_matching(ss, matching([(0, 0), (1, 1)])).label == "food_optimal"
    assert classify_matching(ss, matching([(0, 1), (1, 0)])).label == "color_optimal"
    c = classify_matching(ss, matching([(0, 0)]))
    assert c.label == "unstable"
    assert c.by_food[0] == frozenset({"food_optimal", "median", "stable"})


def test_classify_unique():
    m = Market([[300, 200], [200, 300]], [[300, 200], [200, 300]])
    ss = enumerate_stable_matchings(m)
    c = classify_matching(ss, ss.matchings[0])
    assert c.label == "unique_stable" and c.coincides_with_median


# ----------------------------------------------------------------- payoffs


def test_payoff_stats_knuth_food_optimal():
    s = payoff_stats(knuth_market(), matching([(0, 0), (1, 1)]))
    assert (s.total_welfare, s.food_welfare, s.color_welfare, s.mean) == (600, 400, 200, 150)


def test_payoff_stats_egalitarian():
    m = Market([[400, 1], [1, 400]], [[400, 1], [1, 400]])
    s = payoff_stats(m, matching([(0, 0), (1, 1)]))
    assert s.coefficient_of_variation == 0 and s.gini == 0 and s.total_welfare == 1600


def test_payoff_stats_empty_is_degenerate():
    s = payoff_stats(knuth_market(), Matching.empty(2, 2))
    assert s.total_welfare == 0 and s.degenerate and s.gini is None


def test_gini_known_value():
    # one agent holds everything
    assert gini([0, 0, 0, 4]) == pytest.approx(0.75)


# ---------------------------------------------------------------- file I/O


def test_market_roundtrip(tmp_path):
    m = random_market(random.Random(3), 4).with_spec({"kind": "demo", "seed": 3})
    p = tmp_path / "m.json"
    save_market(m, p)
    back = load_market(p)
    assert back.market_id == m.market_id
    assert (back.payoff_f == m.payoff_f).all() and back.spec == m.spec
    # canonical writer is byte-stable
    assert p.read_text() == dumps_canonical(market_to_dict(back))


def test_market_from_bad_document():
    with pytest.raises(InvalidMarket):
        market_from_dict({"n_f": 2, "n_c": 2, "payoff_f": [[1, 2]], "payoff_c": [[1, 2]]})
    with pytest.raises(InvalidMarket):
        market_from_dict(json.loads('{"n_f": 1}'))
