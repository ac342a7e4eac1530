import io
import json
import random

import numpy as np
import pytest

from decmatch.core import FOOD, Matching, blocking_pairs, deferred_acceptance, is_stable
from decmatch.dynamics import (
    NATURAL,
    STEP_CAP,
    Algorithm,
    DynamicsConfig,
    Selection,
    Transcript,
    parse_transcript,
    read_transcript,
    run,
    run_2rda,
    run_dacc,
    selection_draw,
    transcript_lines,
    write_transcript,
)
from decmatch.errors import EmptyCandidateSet, SchemaMismatch
from decmatch.markets import MarketSpec, generate
from decmatch.rng import SplitMix64

from oracles import knuth_market, random_market


@pytest.fixture(scope="module")
def five_sm():
    return generate(MarketSpec.of("FiveSM_ThreeSP", seed=1))


def _markets(seed, count=40):
    rng = random.Random(seed)
    return [random_market(rng, rng.randint(1, 7), rng.randint(1, 7)) for _ in range(count)]


@pytest.mark.parametrize("algo", [Algorithm.DACC, Algorithm.RPS, Algorithm.RBR])
def test_converging_dynamics_end_stable(algo):
    for k, m in enumerate(_markets(5)):
        tr = run(m, DynamicsConfig(algo, seed=k))
        assert tr.terminated_by == NATURAL
        assert is_stable(m, tr.terminal_matching)
        assert tr.replay() == tr.terminal_matching


def test_2rda_offer_bound_and_termination():
    for k, m in enumerate(_markets(6)):
        tr = run_2rda(m, DynamicsConfig(Algorithm.TwoRDA, seed=k))
        assert len(tr) <= 2 * m.n_f * m.n_c
        assert tr.terminated_by == NATURAL


def test_2rda_never_repeats_an_offer():
    for k, m in enumerate(_markets(7)):
        tr = run(m, DynamicsConfig(Algorithm.TwoRDA, seed=k))
        keys = list(zip(tr.sides.tolist(), tr.proposers.tolist(), tr.receivers.tolist()))
        assert len(keys) == len(set(keys))


def test_2rda_can_end_unstable(five_sm):
    outcomes = {is_stable(five_sm, run(five_sm, DynamicsConfig(Algorithm.TwoRDA, seed=s)).terminal_matching) for s in range(300)}
    assert outcomes == {True, False}


def test_rps_accepts_every_offer(five_sm):
    tr = run(five_sm, DynamicsConfig(Algorithm.RPS, seed=3))
    assert tr.accepted.all() and tr.bilateral.all()
    # every satisfied pair was blocking just before
    for (pre, _), f, c in zip(tr.states(), tr.foods.tolist(), tr.colors.tolist()):
        assert (f, c) in blocking_pairs(five_sm, Matching(pre, five_sm.n_c))


def test_dacc_recorded_compensation_order(five_sm):
    tr = run_dacc(five_sm, DynamicsConfig(Algorithm.DACC, seed=0))
    assert tr.metadata["compensation_order"] == "LIFO"


def test_accepted_offers_are_improvements():
    # a receiver never trades down: accepting means the proposer beats the current partner
    for k, m in enumerate(_markets(8, 20)):
        for algo in (Algorithm.TwoRDA, Algorithm.DACC, Algorithm.RBR):
            tr = run(m, DynamicsConfig(algo, seed=k))
            for (pre, _), s, p, r, a in zip(
                tr.states(), tr.sides.tolist(), tr.proposers.tolist(), tr.receivers.tolist(), tr.accepted.tolist()
            ):
                if not a:
                    continue
                if s == 0:
                    cur = next((f for f, c in enumerate(pre) if c == r), -1)
                    assert cur == -1 or m.payoff_c[p, r] > m.payoff_c[cur, r]
                else:
                    cur = pre[r]
                    assert cur == -1 or m.payoff_f[r, p] > m.payoff_f[r, cur]


def test_knuth_single_proposing_side_equals_da():
    K = knuth_market()
    tr = run(K, DynamicsConfig(Algorithm.DACC, seed=0))
    assert tr.terminal_matching in (deferred_acceptance(K, FOOD).matching, deferred_acceptance(K, "C").matching)


def test_step_cap_reported(five_sm):
    tr = run(five_sm, DynamicsConfig(Algorithm.RPS, seed=1, max_steps=3))
    assert tr.terminated_by == STEP_CAP and len(tr) == 3


def test_same_seed_same_transcript(five_sm):
    cfg = DynamicsConfig(Algorithm.RBR, Selection.exponential(0.05), seed=12345)
    a, b = run(five_sm, cfg), run(five_sm, cfg)
    assert list(transcript_lines(a)) == list(transcript_lines(b))
    c = run(five_sm, DynamicsConfig(Algorithm.RBR, Selection.exponential(0.05), seed=12346))
    assert list(transcript_lines(a)) != list(transcript_lines(c))


def test_one_by_one_market_single_event():
    from decmatch.core import Market

    m = Market([[100]], [[100]])
    for algo in Algorithm:
        tr = run(m, DynamicsConfig(algo, seed=0))
        assert tr.terminal_matching.food == (0,) and tr.accepted.sum() >= 1


# ---------------------------------------------------------------- selection


def test_selection_single_candidate_draws_nothing():
    rng = SplitMix64(5)
    before = rng.state
    assert selection_draw([3.0], Selection.uniform(), rng) == 0
    assert rng.state == before


def test_selection_empty_raises():
    with pytest.raises(EmptyCandidateSet):
        selection_draw([], Selection.uniform(), SplitMix64(0))


def test_selection_frequencies():
    rng = SplitMix64(11)
    n = 30_000
    prop = np.bincount([selection_draw([1, 3], Selection.proportional(), rng) for _ in range(n)], minlength=2) / n
    assert abs(prop[1] - 0.75) < 0.01
    expo = np.bincount([selection_draw([0, 10], Selection.exponential(0.1), rng) for _ in range(n)], minlength=2) / n
    assert abs(expo[1] - np.e / (1 + np.e)) < 0.01


def test_selection_validation():
    with pytest.raises(ValueError):
        Selection("exponential")
    with pytest.raises(ValueError):
        Selection("uniform", 0.3)
    with pytest.raises(ValueError):
        Selection.parse("exponential")
    assert Selection.parse("exponential(0.05)") == Selection.exponential(0.05)
    with pytest.raises(ValueError):
        selection_draw([0, 1], Selection.proportional(), SplitMix64(0))


def test_algorithm_parse():
    assert Algorithm.parse("2rda") is Algorithm.TwoRDA and Algorithm.parse("rps") is Algorithm.RPS
    with pytest.raises(ValueError):
        Algorithm.parse("DA")


# --------------------------------------------------------------- transcripts


def test_transcript_roundtrip(tmp_path, five_sm):
    tr = run(five_sm, DynamicsConfig(Algorithm.RPS, Selection.exponential(0.05), seed=8))
    p = tmp_path / "t.ndjson"
    write_transcript(tr, p)
    back = read_transcript(p, five_sm)
    assert list(transcript_lines(back)) == list(transcript_lines(tr))
    assert back.config == tr.config and back.seed == 8


def test_transcript_events_and_prefix(five_sm):
    tr = run(five_sm, DynamicsConfig(Algorithm.DACC, seed=2))
    ev = tr.events
    assert [e.index for e in ev] == list(range(len(tr)))
    assert ev[0].pre_matching_hash == ev[1].pre_matching_hash or ev[0].accepted
    pre = tr.prefix(5)
    assert len(pre) == 5 and pre.events == ev[:5]


def _header(**kw):
    d = {"record": "header", "market_id": "", "n_f": 2, "n_c": 2}
    d.update(kw)
    return json.dumps(d)


def _ev(i, side="F", p=0, r=0, acc=True, **kw):
    d = {"index": i, "proposer_side": side, "proposer_idx": p, "receiver_idx": r, "accepted": acc}
    d.update(kw)
    return json.dumps(d)


def test_transcript_from_lines():
    tr = parse_transcript([_header(), _ev(0), _ev(1, "C", 1, 1)])
    assert tr.terminal_matching.food == (0, 1)


@pytest.mark.parametrize(
    "lines, line_no",
    [
        ([_ev(0)], 1),
        ([_header(), _ev(0, p=5)], 2),
        ([_header(), _ev(0), _ev(2)], 3),
        ([_header(), _ev(0, side="X")], 2),
        ([_header(), _ev(0, acc=1)], 2),
        ([_header(), "{not json"], 2),
        ([_header(), _ev(0, t_millis=5), _ev(1)], None),
        ([_header(), _ev(0, t_millis=5), _ev(1, t_millis=3)], None),
        ([_header(terminal_matching=[1, 0]), _ev(0)], 1),
    ],
)
def test_transcript_schema_errors(lines, line_no):
    with pytest.raises(SchemaMismatch) as err:
        parse_transcript(lines)
    assert err.value.line == line_no


def test_transcript_market_mismatch():
    K = knuth_market()
    with pytest.raises(SchemaMismatch):
        parse_transcript([_header(n_f=3, n_c=3)], K)
    with pytest.raises(SchemaMismatch):
        parse_transcript([_header(market_id="other")], K)


def test_empty_file():
    with pytest.raises(SchemaMismatch):
        parse_transcript(io.StringIO(""))


def test_from_pairs_records_bilateral():
    K = knuth_market()
    tr = Transcript.from_pairs(K, [(0, 0), (1, 0)])
    assert tr.bilateral.all() and tr.terminal_matching.food == (-1, 0)
