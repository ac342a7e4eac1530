import numpy as np
import pytest

from decmatch.core import (
    Market,
    blocking_pairs,
    enumerate_stable_matchings,
    load_market,
    median_stable_matching,
    save_market,
    Matching,
)
from decmatch.errors import GenerationBudgetExhausted
from decmatch.markets import CLASSES, MarketSpec, cardinalize, generate, spec_of, validate


def _spec(kind, **kw):
    if kind == "GenericUnique":
        kw.setdefault("target_corr", 0.5)
    return MarketSpec.of(kind, **kw)


def test_cardinalize_example_payoffs():
    lists = [list(range(8))] * 8
    m = cardinalize(lists, lists, MarketSpec.of("Assortative"))
    assert m.payoff_f[0].tolist() == [240, 220, 200, 180, 160, 140, 120, 100]


def test_color_shift_keeps_ordinals():
    rng = np.random.default_rng(0)
    fl = [rng.permutation(6).tolist() for _ in range(6)]
    cl = [rng.permutation(6).tolist() for _ in range(6)]
    a = cardinalize(fl, cl, MarketSpec.of("OneSidedAssortative", n=6))
    b = cardinalize(fl, cl, MarketSpec.of("OneSidedAssortative", n=6, color_shift=100))
    assert (b.payoff_c - a.payoff_c == 100).all() and (b.payoff_f == a.payoff_f).all()
    assert (a.preferences.food_lists == np.array(fl)).all()
    assert (b.preferences.color_lists == np.array(cl)).all()


def test_marginals_do_not_change_stable_set():
    rng = np.random.default_rng(1)
    fl = [rng.permutation(6).tolist() for _ in range(6)]
    cl = [rng.permutation(6).tolist() for _ in range(6)]
    a = cardinalize(fl, cl, MarketSpec.of("OneSidedAssortative", n=6, marginals=(20, 20)))
    b = cardinalize(fl, cl, MarketSpec.of("OneSidedAssortative", n=6, marginals=(70, 20)))
    assert enumerate_stable_matchings(a).matchings == enumerate_stable_matchings(b).matchings


@pytest.mark.parametrize("kind", CLASSES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generate_passes_own_validation(kind, seed):
    spec = _spec(kind, seed=seed)
    m = generate(spec)
    assert validate(spec, m).passed
    assert spec_of(m) == spec
    # pure function of the spec
    again = generate(spec)
    assert (again.payoff_f == m.payoff_f).all() and (again.payoff_c == m.payoff_c).all()


def test_assortative_n3_diagonal():
    m = generate(MarketSpec.of("Assortative", n=3))
    ss = enumerate_stable_matchings(m)
    assert len(ss) == 1 and ss.matchings[0].food == (0, 1, 2)


def test_five_sm_structure():
    m = generate(MarketSpec.of("FiveSM_ThreeSP", seed=4))
    ss = enumerate_stable_matchings(m)
    assert len(ss) == 5
    assert all(len(p) == 3 for p in ss.food_partners + ss.color_partners)
    (med,) = median_stable_matching(ss, m)
    for f, parts in enumerate(ss.food_partners):
        assert med.food[f] == parts[1]


def test_egalitarian_designated_matching_unstable():
    m = generate(MarketSpec.of("EgalitarianUnstable", n=8, seed=3))
    eta = Matching(tuple(m.spec["designated"]), 8)
    assert blocking_pairs(m, eta)
    assert len(enumerate_stable_matchings(m)) == 1


@pytest.mark.parametrize("rho", [-0.9, 0.9])
def test_generic_unique_correlation(rho):
    spec = MarketSpec.of("GenericUnique", target_corr=rho, seed=1)
    report = validate(spec, generate(spec))
    assert abs(report.measures["alignment_corr"] - rho) <= 0.05


def test_embedded_blocks():
    spec = MarketSpec.of("Embedded4x4", seed=0, dispersion=30)
    report = validate(spec, generate(spec))
    assert report.passed and report.measures["n_stable"] == 4
    assert report.measures["avg_partners"] == 1.75


def test_wrong_class_fails_validation():
    m = generate(MarketSpec.of("Assortative"))
    report = validate(MarketSpec.of("FiveSM_ThreeSP"), m)
    assert not report.passed and "five_stable_matchings" in report.failures()


def test_size_mismatch_fails_fast():
    m = generate(MarketSpec.of("Assortative", n=4))
    assert validate(MarketSpec.of("Assortative", n=5), m).failures() == ["size"]


def test_budget_exhausted():
    with pytest.raises(GenerationBudgetExhausted) as err:
        generate(MarketSpec.of("GenericUnique", target_corr=-1.0, seed=0, budget=3))
    assert err.value.attempts == 3


@pytest.mark.parametrize(
    "kw",
    [
        {"kind": "Nope"},
        {"kind": "GenericUnique"},
        {"kind": "Assortative", "marginals": (0, 20)},
        {"kind": "Assortative", "dispersion": 5},
        {"kind": "FiveSM_ThreeSP", "n": 6},
        {"kind": "GenericUnique", "target_corr": 1.5},
    ],
)
def test_bad_specs(kw):
    with pytest.raises(ValueError):
        MarketSpec(**kw)


def test_generated_market_file_roundtrip(tmp_path):
    spec = MarketSpec.of("LargeThreeSM", seed=2)
    m = generate(spec)
    save_market(m, tmp_path / "m.json")
    back = load_market(tmp_path / "m.json")
    assert back.market_id == m.market_id and validate(spec_of(back), back).passed
