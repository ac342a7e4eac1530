import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decmatch.core import Market, Matching, blocking_pairs, enumerate_stable_matchings, is_stable
from decmatch.dynamics import Algorithm, DynamicsConfig, Transcript, run
from decmatch.errors import DegenerateNormalizer
from decmatch.markets import MarketSpec, generate
from decmatch.metrics import (
    aggregate_trajectories,
    classify_offer,
    count_cycles,
    cycle_profile,
    iter_offer_flags,
    match_breaks,
    match_level_cycles,
    max_disjoint,
    offer_table,
    pct_pairs_without_blocking,
    relative_loss,
    repeated_matchings,
    stability_snapshot,
    terciles,
    trajectory,
    transcript_summary,
)

from oracles import brute_blocking, brute_cycles, brute_max_disjoint, da_events, knuth_market, matching, random_market

KNUTH_CYCLE = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]


def _transcript(market, events, t_millis=None):
    s, p, r, a = zip(*events) if events else ((), (), (), ())
    return Transcript(market.market_id, market.n_f, market.n_c, s, p, r, a, t_millis=t_millis)


@pytest.fixture(scope="module")
def five_sm():
    return generate(MarketSpec.of("FiveSM_ThreeSP", seed=1))


# --------------------------------------------------------------- snapshots


def test_snapshot_zero_on_stable_complete():
    K = knuth_market()
    for pairs in ([(0, 0), (1, 1)], [(0, 1), (1, 0)]):
        s = stability_snapshot(K, matching(pairs))
        assert (s.n_blocking_pairs, s.n_agents_blocked, s.max_disjoint_blocking_pairs) == (0, 0, 0)
        assert s.avg_loss_abs == 0 and s.avg_loss_rel_final == 0 and s.pct_unmatched == 0


def test_snapshot_knuth_single_pair():
    s = stability_snapshot(knuth_market(), matching([(0, 0)]))
    assert s.n_blocking_pairs == 2 and s.max_disjoint_blocking_pairs == 1
    assert s.n_agents_blocked == 3
    # losses: f1 0, f2 200, c1 100, c2 100
    assert s.avg_loss_abs == 100.0
    assert s.pct_unmatched == 50.0
    assert s.avg_loss_rel_final is None
    # market mean of all entries is 150
    assert s.avg_loss_rel_market_mean == pytest.approx(100 / 150)
    assert s.avg_loss_rel_random == pytest.approx((0 + 200 / 150 + 100 / 150 + 100 / 150) / 4)


def test_relative_loss_raises_on_zero_divisor():
    with pytest.raises(DegenerateNormalizer):
        relative_loss(knuth_market(), matching([(0, 0)]), "final")
    assert relative_loss(knuth_market(), matching([(0, 0)]), "market_mean") > 0


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_snapshot_invariants(n, seed):
    rng = random.Random(seed)
    m = random_market(rng, n)
    perm = list(range(n))
    rng.shuffle(perm)
    food = tuple(c if rng.random() < 0.8 else -1 for c in perm)
    mu = Matching(food, n)
    s = stability_snapshot(m, mu)
    assert s.max_disjoint_blocking_pairs <= s.n_blocking_pairs
    assert s.avg_loss_abs >= 0
    zero = s.n_blocking_pairs == 0 and s.avg_loss_abs == 0 and s.pct_unmatched == 0
    assert zero == (is_stable(m, mu) and mu.is_complete())


def test_pct_pairs_without_blocking():
    K = knuth_market()
    assert pct_pairs_without_blocking(K, matching([(0, 0), (1, 1)])) == 100.0
    assert pct_pairs_without_blocking(K, matching([(0, 0)])) == 0.0
    assert pct_pairs_without_blocking(K, Matching.empty(2, 2)) is None


def test_max_disjoint_oracle():
    rng = random.Random(2024)
    for _ in range(500):
        n = rng.randint(1, 6)
        m = random_market(rng, n)
        perm = list(range(n))
        rng.shuffle(perm)
        food = tuple(c if rng.random() < 0.6 else -1 for c in perm)
        pairs = brute_blocking(m, food)
        assert max_disjoint(pairs) == brute_max_disjoint(pairs)


def test_max_disjoint_small_graphs():
    assert max_disjoint([]) == 0
    assert max_disjoint([(0, 0), (0, 1), (1, 0)]) == 2
    assert max_disjoint([(0, 0), (1, 0), (2, 0)]) == 1


# ------------------------------------------------------------------ cycles

F, F2, C, C2 = 0, 1, 0, 1


@pytest.mark.parametrize(
    "seq, lengths",
    [
        ([(F, C), (F, C2), (F2, C), (F, C)], [3, 3]),
        ([(F, C), (F, C2), (F, C), (F, C2)], [3, 3]),
        ([(F, C), (F, C2), (F2, C), (F2, C2), (F2, C), (F, C)], [5, 5, 3]),
    ],
)
@pytest.mark.parametrize("backend", ["python", None])
def test_worked_cycle_examples(seq, lengths, backend):
    total, avg = count_cycles(seq, backend)
    assert total == len(lengths)
    assert avg == pytest.approx(sum(lengths) / len(lengths))
    expanded = sorted(length for length, k in cycle_profile(seq, backend) for _ in range(k))
    assert expanded == sorted(lengths)


def test_cycle_dp_equals_exhaustive():
    rng = random.Random(77)
    for _ in range(500):
        T = rng.randint(0, 12)
        k = rng.randint(1, 3)
        seq = [(rng.randrange(k), rng.randrange(k)) for _ in range(T)]
        got = sorted(length for length, m in cycle_profile(seq) for _ in range(m))
        assert got == sorted(brute_cycles(seq))


def test_cycle_count_is_exact_beyond_64_bits():
    # alternating two-pair chains double the longest-path multiplicity at each step
    seq = [(0, 0)] + [(0, 1), (1, 1), (1, 0), (1, 1)] * 40 + [(0, 0)]
    a, _ = count_cycles(seq, "python")
    b, _ = count_cycles(seq)
    assert a == b and isinstance(a, int)


def test_match_level_cycles_on_transcript():
    K = knuth_market()
    rep = match_level_cycles(Transcript.from_pairs(K, [(F, C), (F, C2), (F2, C), (F, C)]))
    assert rep.cycle_count == 2 and rep.avg_length == 3
    assert rep.repeated_match_fraction == 0.25
    assert match_level_cycles([]).cycle_count == 0


def test_cycle_report_json_keeps_big_counts_exact():
    from decmatch.metrics import CycleReport

    d = CycleReport(2**70 + 1, 5.0, 0.5, 3).to_dict()
    assert d["cycle_count"] == str(2**70 + 1)


# ------------------------------------------------------------ knuth cycle


def test_knuth_sequence_blocks_and_returns():
    K = knuth_market()
    state = matching([(0, 0)])
    tr = Transcript.from_pairs(K, KNUTH_CYCLE)
    posts = [post for _, post in tr.states()]
    # each pair after the first blocks the state it is applied to
    for k in range(1, len(KNUTH_CYCLE)):
        assert KNUTH_CYCLE[k] in blocking_pairs(K, Matching(posts[k - 1], 2))
    assert Matching(posts[-1], 2) == state
    assert repeated_matchings(tr) == (1, 1)
    assert transcript_summary(K, tr).repeated_matching_count == 1


def test_knuth_trajectory_returns_to_start():
    K = knuth_market()
    tr = Transcript.from_pairs(K, KNUTH_CYCLE)
    pts = trajectory(K, tr, grid=len(KNUTH_CYCLE))
    first, last = pts[0], pts[-1]
    assert first.n_blocking_pairs == 4  # empty matching
    assert first.event_index == -1 and last.event_index == 4
    start = stability_snapshot(K, matching([(0, 0)]))
    # after the first event and at the close the state is {(f1,c1)}
    for p in (pts[1], last):
        assert p.n_blocking_pairs == start.n_blocking_pairs == 2
        assert p.avg_loss_abs == start.avg_loss_abs == 100.0
        assert p.max_disjoint_blocking_pairs == 1


# ------------------------------------------------------------ offer flags


def _three_market():
    pf = [[300, 200, 100], [300, 200, 100], [300, 200, 100]]
    pc = [[300, 300, 300], [200, 200, 200], [100, 100, 100]]
    return Market(pf, pc)


def test_first_offer_flags():
    m = _three_market()
    tr = _transcript(m, [(0, 1, 0, 1)])
    fl = classify_offer(m, tr, tr.events[0])
    assert not fl.repeated and fl.downward and fl.gale_shapley and not fl.skips_someone
    tr = _transcript(m, [(0, 1, 1, 1)])
    fl = classify_offer(m, tr, tr.events[0])
    assert fl.downward and fl.skips_someone and not fl.gale_shapley


def test_skip_after_top_offer():
    m = _three_market()
    tr = _transcript(m, [(0, 0, 0, 0), (0, 0, 2, 1)])
    fl = classify_offer(m, tr, tr.events[1])
    assert fl.downward and not fl.gale_shapley and fl.skips_someone


def test_upward_offer_not_downward():
    m = _three_market()
    tr = _transcript(m, [(0, 0, 2, 1), (0, 0, 1, 1)])
    fl = classify_offer(m, tr, tr.events[1])
    assert not fl.downward and not fl.gale_shapley


def test_repeat_and_previous_match():
    m = _three_market()
    tr = _transcript(m, [(0, 2, 0, 1), (0, 1, 0, 1), (0, 2, 0, 1)])
    fl = classify_offer(m, tr, tr.events[2])
    assert fl.repeated and fl.to_previous_match
    # c0 now holds f1, whom it ranks above f2
    assert not fl.to_blocking_pair and fl.only_proposer_beneficial


def test_proposer_activity():
    m = _three_market()
    tr = _transcript(m, [(0, 0, 1, 1), (0, 0, 2, 0)])
    assert classify_offer(m, tr, tr.events[1]).proposer_active
    tr = _transcript(m, [(0, 0, 0, 1), (0, 0, 2, 0)])
    assert not classify_offer(m, tr, tr.events[1]).proposer_active


def test_flag_implications_on_runs(five_sm):
    ss = enumerate_stable_matchings(five_sm)
    for algo in Algorithm:
        for seed in range(5):
            tr = run(five_sm, DynamicsConfig(algo, seed=seed))
            for *_, fl, mirror in iter_offer_flags(five_sm, tr, ss):
                for x in (fl, mirror):
                    if x is None:
                        continue
                    assert not x.gale_shapley or (x.downward and not x.skips_someone)
                    assert not (x.to_blocking_pair and x.only_proposer_beneficial)
                    assert x.sp_rank in ("best", "median", "worst", "nonstable")


def test_da_repeats_nothing_and_is_gale_shapley():
    rng = random.Random(4)
    for _ in range(30):
        m = random_market(rng, rng.randint(2, 7))
        tr = _transcript(m, da_events(m))
        s = transcript_summary(m, tr)
        assert s.overall["pct_repeated_offers"] == 0
        assert s.overall["pct_gale_shapley"] == 100.0
        assert s.overall["pct_downward"] == 100.0


def test_rps_summary_full_acceptance(five_sm):
    ss = enumerate_stable_matchings(five_sm)
    tr = run(five_sm, DynamicsConfig(Algorithm.RPS, seed=4))
    s = transcript_summary(five_sm, tr, ss)
    assert s.pct_accepted == 100.0 and s.final_stable
    assert s.overall["offers"] == pytest.approx(len(tr))
    labels = s.final_labels
    assert labels["food_optimal"] + labels["color_optimal"] + labels["non_extremal"] == 1
    flat = s.flat()
    assert flat["pct_final_matching_stable"] == 100.0 and flat["step_capped"] == 0.0


def test_offer_table_weights_bilateral(five_sm):
    tr = run(five_sm, DynamicsConfig(Algorithm.RPS, seed=1))
    rows = offer_table(five_sm, tr)
    assert len(rows) == 2 * len(tr)
    assert sum(r["weight"] for r in rows) == len(tr)


# ------------------------------------------------------ terciles & breaks


def test_terciles_untimed_and_timed():
    K = knuth_market()
    tr = Transcript.from_pairs(K, KNUTH_CYCLE)
    assert terciles(tr) == [0, 0, 1, 2, 2]
    tr = Transcript.from_pairs(K, KNUTH_CYCLE, t_millis=[0, 10, 20, 30, 90])
    assert terciles(tr) == [0, 0, 0, 1, 2]


def test_match_breaks():
    K = knuth_market()
    tr = Transcript.from_pairs(K, [(0, 0), (1, 1), (1, 0), (0, 0)])
    assert match_breaks(tr) == [True, True, True, False]


def test_summary_rates_when_timed():
    K = knuth_market()
    tr = Transcript.from_pairs(K, KNUTH_CYCLE, t_millis=[0, 15000, 30000, 45000, 60000])
    s = transcript_summary(K, tr)
    assert s.offers_per_minute == 5.0 and s.matches_per_minute == 5.0
    assert sum(b["offers"] for b in s.by_tercile) == 5


# --------------------------------------------------------------- trajectory


def test_da_trajectory_on_knuth():
    K = knuth_market()
    tr = _transcript(K, da_events(K))
    pts = trajectory(K, tr, grid=11)
    assert pts[0].unmatched == 1.0 and pts[0].stable_final == 0.0
    assert pts[-1].unmatched == 0.0 and pts[-1].stable_final == 1.0
    assert pts[0].t == 0 and pts[-1].t == 100


def test_empty_transcript_trajectory():
    K = knuth_market()
    pts = trajectory(K, _transcript(K, []))
    assert len(pts) == 1 and pts[0].unmatched == 1.0 and pts[0].n_blocking_pairs == 4


def test_trajectory_grid_validation():
    K = knuth_market()
    with pytest.raises(ValueError):
        trajectory(K, _transcript(K, []), grid=1)


def test_trajectory_shares_sum_to_one(five_sm):
    ss = enumerate_stable_matchings(five_sm)
    series = []
    for algo in Algorithm:
        tr = run(five_sm, DynamicsConfig(algo, seed=9))
        pts = trajectory(five_sm, tr, 51, ss)
        series.append(pts)
        for p in pts:
            total = p.stable_final + p.stable_transient + p.unstable + p.unmatched
            assert abs(total - 1.0) < 1e-12
            assert p.median + p.non_median_stable == pytest.approx(p.stable_final + p.stable_transient)
        assert pts[-1].unmatched == 0.0
    agg = aggregate_trajectories(series)
    assert len(agg) == 51 and agg[0]["n"] == 4
    assert agg[-1]["unmatched_mean"] == 0.0
    vals = [s[10].n_blocking_pairs for s in series]
    assert agg[10]["n_blocking_pairs_sd_sample"] == pytest.approx(np.std(vals, ddof=1))
    assert agg[10]["n_blocking_pairs_sd_pop"] == pytest.approx(np.std(vals))
