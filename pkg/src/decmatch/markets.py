"""Market generators, cardinalization and structural validation.

Every generator designs the intended stable structure first, fills the rest
of each preference list at random from the seed stream, and then checks the
result with the full stable-set enumeration.  Candidates that miss the
contract are discarded and the search continues.
"""
from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    COLOR,
    FOOD,
    Market,
    Matching,
    StableSet,
    blocking_pairs,
    deferred_acceptance,
    enumerate_stable_matchings,
    payoff_stats,
    alignment_correlation,
)
from .errors import GenerationBudgetExhausted

CLASSES = (
    "Assortative",
    "OneSidedAssortative",
    "EgalitarianUnstable",
    "GenericUnique",
    "Embedded4x4",
    "FiveSM_ThreeSP",
    "LargeUnique",
    "LargeThreeSM",
)
DEFAULT_N = {"Embedded4x4": 8, "FiveSM_ThreeSP": 8, "LargeUnique": 15, "LargeThreeSM": 15}
DEFAULT_BUDGET = 100_000
CORR_TOLERANCE = 0.05
WELFARE_TOLERANCE = 0.05


@dataclass(frozen=True)
class MarketSpec:
    kind: str
    n: int = 8
    marginals: tuple[int, int] = (20, 20)
    color_shift: int = 0
    base: int = 100
    seed: int = 0
    target_corr: float | None = None
    dispersion: int = 0
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.kind not in CLASSES:
            raise ValueError(f"unknown market class {self.kind!r}; expected one of {CLASSES}")
        object.__setattr__(self, "marginals", tuple(int(m) for m in self.marginals))
        m_f, m_c = self.marginals
        if m_f <= 0 or m_c <= 0:
            raise ValueError("marginal payoff differences must be positive")
        if self.base <= 0:
            raise ValueError("base payoff must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.target_corr is not None and not -1.0 <= self.target_corr <= 1.0:
            raise ValueError("target_corr must lie in [-1, 1]")
        if self.kind == "GenericUnique" and self.target_corr is None:
            raise ValueError("GenericUnique needs target_corr")
        if self.dispersion < 0:
            raise ValueError("dispersion must be non-negative")
        if self.dispersion and self.kind != "Embedded4x4":
            raise ValueError("dispersion only applies to Embedded4x4")
        if self.kind in ("Embedded4x4", "FiveSM_ThreeSP") and self.n != 8:
            raise ValueError(f"{self.kind} is defined for n = 8")
        if self.kind == "LargeThreeSM" and self.n < 12:
            raise ValueError("LargeThreeSM needs n >= 12")
        if self.kind == "EgalitarianUnstable":
            if self.marginals[0] != self.marginals[1] or self.color_shift != 0:
                raise ValueError("EgalitarianUnstable needs equal marginals and no color shift")
            if self.n < 3:
                raise ValueError("EgalitarianUnstable needs n >= 3")

    @classmethod
    def of(cls, kind: str, **kw) -> "MarketSpec":
        kw.setdefault("n", DEFAULT_N.get(kind, 8))
        return cls(kind, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["marginals"] = list(self.marginals)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarketSpec":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if k == "marginals" else v) for k, v in d.items() if k in keys})


# ---------------------------------------------------------------- payoffs


def cardinalize(food_lists, color_lists, spec: MarketSpec, offsets: Sequence[int] | None = None) -> Market:
    """Payoffs from rank lists: the k-th choice is worth ``base + (n - k) * m``.

    Colors also receive ``color_shift``.  ``offsets`` (one per food, then one
    per color) lift an agent's whole payoff schedule, which moves cardinal
    payoffs but never the ordinal ranking.
    """
    food_lists = np.asarray(food_lists, dtype=np.int64)
    color_lists = np.asarray(color_lists, dtype=np.int64)
    n_f, n_c = food_lists.shape
    m_f, m_c = spec.marginals
    pf = np.zeros((n_f, n_c), dtype=np.int64)
    pc = np.zeros((n_f, n_c), dtype=np.int64)
    off = list(offsets) if offsets is not None else [0] * (n_f + n_c)
    for f in range(n_f):
        for k, c in enumerate(food_lists[f], start=1):
            pf[f, c] = spec.base + (n_c - k) * m_f + off[f]
    for c in range(n_c):
        for k, f in enumerate(color_lists[c], start=1):
            pc[f, c] = spec.base + (n_f - k) * m_c + spec.color_shift + off[n_f + c]
    return Market(pf, pc)


# ----------------------------------------------------------- list helpers


def _build_lists(rng: random.Random, n: int, heads: Sequence[Sequence[int]], tails: Sequence[Sequence[int]] = ()) -> list[list[int]]:
    """Each list starts with its fixed head, ends with its fixed tail and has the rest shuffled between."""
    out = []
    for i in range(n):
        head = list(heads[i])
        tail = list(tails[i]) if tails else []
        rest = [x for x in range(n) if x not in head and x not in tail]
        rng.shuffle(rest)
        out.append(head + rest + tail)
    return out


def _interleave(rng: random.Random, n: int, stable: Sequence[int], spread: int) -> list[int]:
    """A full list with the ``stable`` agents in order at random positions among the top ``spread``."""
    spread = max(spread, len(stable))
    slots = sorted(rng.sample(range(spread), len(stable)))
    others = [x for x in range(n) if x not in stable]
    rng.shuffle(others)
    out, it = [], iter(others)
    for pos in range(n):
        if pos in slots:
            out.append(stable[slots.index(pos)])
        else:
            out.append(next(it))
    return out


def _relabel(rng: random.Random, food_lists, color_lists, designed: Sequence[Sequence[int]] = ()):
    """Shuffle agent labels so structure is not visible in the indices."""
    n = len(food_lists)
    pf = list(range(n))
    pcol = list(range(n))
    rng.shuffle(pf)
    rng.shuffle(pcol)
    new_f = [None] * n
    new_c = [None] * n
    for f in range(n):
        new_f[pf[f]] = [pcol[c] for c in food_lists[f]]
    for c in range(n):
        new_c[pcol[c]] = [pf[f] for f in color_lists[c]]
    new_designed = []
    for food in designed:
        m = [-1] * n
        for f, c in enumerate(food):
            if c >= 0:
                m[pf[f]] = pcol[c]
        new_designed.append(m)
    return new_f, new_c, new_designed


# -------------------------------------------------------------- generators


@dataclass
class _Candidate:
    food_lists: list
    color_lists: list
    extra: dict = field(default_factory=dict)
    offsets: list | None = None


def _assortative(rng, spec):
    n = spec.n
    return _Candidate([list(range(n)) for _ in range(n)], [list(range(n)) for _ in range(n)])


def _one_sided(rng, spec):
    n = spec.n
    common = list(range(n))
    rng.shuffle(common)
    colors = []
    for _ in range(n):
        order = list(range(n))
        rng.shuffle(order)
        colors.append(order)
    return _Candidate([list(common) for _ in range(n)], colors)


def _corr(a, b) -> float:
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    if saa == 0 or sbb == 0:
        return float("nan")
    return sab / math.sqrt(saa * sbb)


def _rank_profile(rng, n: int, rho: float | None, top: int):
    """Partner ranks (r for foods, s for colors) whose correlation is near ``rho``."""
    r = [rng.randint(1, top) for _ in range(n)]
    s = [rng.randint(1, top) for _ in range(n)]
    if rho is None:
        return r, s
    for _ in range(400):
        c = _corr(r, s)
        if not math.isnan(c) and abs(c - rho) <= CORR_TOLERANCE / 2:
            return r, s
        i = rng.randrange(n)
        which = rng.random() < 0.5
        vec = s if which else r
        old = vec[i]
        vec[i] = rng.randint(1, top)
        c2 = _corr(r, s)
        if math.isnan(c2) or (not math.isnan(c) and abs(c2 - rho) > abs(c - rho)):
            vec[i] = old
    return None


def _unique_design(rng, spec, rho: float | None, top: int):
    """Lists that make a random perfect matching stable, with designed partner ranks."""
    n = spec.n
    prof = _rank_profile(rng, n, rho, top)
    if prof is None:
        return None
    r, s = prof
    mu = list(range(n))
    rng.shuffle(mu)
    inv = [0] * n
    for f, c in enumerate(mu):
        inv[c] = f
    above_f = []
    for f in range(n):
        pool = [c for c in range(n) if c != mu[f]]
        above_f.append(set(rng.sample(pool, r[f] - 1)))
    above_c = []
    for c in range(n):
        pool = [f for f in range(n) if f != inv[c] and c not in above_f[f]]
        if len(pool) < s[c] - 1:
            return None
        above_c.append(set(rng.sample(pool, s[c] - 1)))
    foods = []
    for f in range(n):
        head = list(above_f[f])
        rng.shuffle(head)
        rest = [c for c in range(n) if c != mu[f] and c not in above_f[f]]
        rng.shuffle(rest)
        foods.append(head + [mu[f]] + rest)
    colors = []
    for c in range(n):
        head = list(above_c[c])
        rng.shuffle(head)
        rest = [f for f in range(n) if f != inv[c] and f not in above_c[c]]
        rng.shuffle(rest)
        colors.append(head + [inv[c]] + rest)
    return _Candidate(foods, colors, {"designed_stable": mu})


def _generic_unique(rng, spec):
    return _unique_design(rng, spec, spec.target_corr, top=4 if spec.n <= 8 else 6)


def _egalitarian(rng, spec):
    """Unique stable matching where foods get their first choice; a designated
    matching gives every agent its second choice.  A few colors rank their
    stable partner first, so the designated matching is blocked."""
    n = spec.n
    mu = list(range(n))
    rng.shuffle(mu)
    while True:
        eta = list(range(n))
        rng.shuffle(eta)
        if all(eta[f] != mu[f] for f in range(n)):
            break
    inv_mu = [0] * n
    inv_eta = [0] * n
    for f in range(n):
        inv_mu[mu[f]] = f
        inv_eta[eta[f]] = f
    # colors' ranks of their stable partner: welfare equality needs sum(s - 2) == n
    n_first = rng.randint(1, max(1, n // 3))
    s = [1] * n_first + [3] * (n - n_first)
    excess = sum(x - 2 for x in s) - n
    i = n - 1
    while excess < 0 and i >= n_first:
        bump = min(-excess, n - 3)
        s[i] += bump
        excess += bump
        i -= 1
    rng.shuffle(s)
    foods = _build_lists(rng, n, [[mu[f], eta[f]] for f in range(n)])
    colors = []
    for c in range(n):
        rest = [f for f in range(n) if f not in (inv_mu[c], inv_eta[c])]
        rng.shuffle(rest)
        if s[c] == 1:
            order = [inv_mu[c], inv_eta[c]] + rest
        else:
            order = rest[:1] + [inv_eta[c]] + rest[1:]
            order.insert(s[c] - 1, inv_mu[c])
        colors.append(order)
    return _Candidate(foods, colors, {"designated": eta, "designated_rank": 2})


def _cycle_rotation(partners: list[int], cycle: Sequence[int]) -> list[int]:
    """Each food in ``cycle`` takes the current partner of the next food in the cycle."""
    out = list(partners)
    for i, f in enumerate(cycle):
        out[f] = partners[cycle[(i + 1) % len(cycle)]]
    return out


def _from_chain(rng, n: int, matchings: Sequence[list[int]], spread: int):
    """Lists in which every agent's distinct partners across ``matchings`` appear
    in the designed order (foods: first matching best; colors: reversed)."""
    foods = []
    for f in range(n):
        seq = []
        for m in matchings:
            if m[f] not in seq:
                seq.append(m[f])
        foods.append(_interleave(rng, n, seq, spread))
    colors = []
    for c in range(n):
        seq = []
        for m in reversed(matchings):
            f = m.index(c)
            if f not in seq:
                seq.append(f)
        colors.append(_interleave(rng, n, seq, spread))
    return foods, colors


def _five_sm(rng, spec):
    n = 8
    m0 = list(range(n))
    a = [0, 1, 2, 3]
    b = [4, 5, 6, 7]
    rng.shuffle(a)
    rng.shuffle(b)
    ma = _cycle_rotation(m0, a)
    mab = _cycle_rotation(ma, b)
    # the top rotation alternates between the blocks so it needs both below it
    c_cycle = [x for pair in zip(a, b) for x in pair]
    mabc = _cycle_rotation(mab, c_cycle)
    foods, colors = _from_chain(rng, n, [m0, mab, mabc], spread=rng.choice([3, 4, 5]))
    # color partner orders follow the poset, not a chain, so rebuild color lists
    colors = []
    mb = _cycle_rotation(m0, b)
    for c in range(n):
        seq = []
        for m in (mabc, mab, ma, mb, m0):
            f = m.index(c)
            if f not in seq:
                seq.append(f)
        colors.append(_interleave(rng, n, seq, rng.choice([3, 4, 5])))
    return _Candidate(foods, colors)


def _embedded(rng, spec):
    n = 8
    blocks = [[0, 1, 2, 3], [4, 5, 6, 7]]
    m0 = list(range(n))
    m1 = list(m0)
    for blk in blocks:
        cyc = rng.sample(blk, 3)
        m1 = _cycle_rotation(m1, cyc)
    foods, colors = [], []
    for f in range(n):
        blk = blocks[f // 4]
        other = blocks[1 - f // 4]
        seq = [m0[f]] if m0[f] == m1[f] else [m0[f], m1[f]]
        within = _interleave(rng, 4, [blk.index(x) for x in seq], 4)
        cross = list(other)
        rng.shuffle(cross)
        foods.append([blk[i] for i in within] + cross)
    for c in range(n):
        blk = blocks[c // 4]
        other = blocks[1 - c // 4]
        f0, f1 = m0.index(c), m1.index(c)
        seq = [f0] if f0 == f1 else [f1, f0]
        within = _interleave(rng, 4, [blk.index(x) for x in seq], 4)
        cross = list(other)
        rng.shuffle(cross)
        colors.append([blk[i] for i in within] + cross)
    offsets = [rng.randint(0, spec.dispersion) for _ in range(2 * n)] if spec.dispersion else None
    return _Candidate(foods, colors, {"blocks": blocks}, offsets)


def _large_three(rng, spec):
    n = spec.n
    m0 = list(range(n))
    first = list(range(n))
    rng.shuffle(first)
    m1 = _cycle_rotation(m0, first)
    k = rng.randint(math.ceil(2 * n / 3), n)
    second = rng.sample(range(n), k)
    m2 = _cycle_rotation(m1, second)
    foods, colors = _from_chain(rng, n, [m0, m1, m2], spread=rng.choice([3, 4, 5]))
    return _Candidate(foods, colors)


def _large_unique(rng, spec):
    return _unique_design(rng, spec, spec.target_corr, top=6)


_GENERATORS: dict[str, Callable] = {
    "Assortative": _assortative,
    "OneSidedAssortative": _one_sided,
    "EgalitarianUnstable": _egalitarian,
    "GenericUnique": _generic_unique,
    "Embedded4x4": _embedded,
    "FiveSM_ThreeSP": _five_sm,
    "LargeUnique": _large_unique,
    "LargeThreeSM": _large_three,
}
_UNIQUE = {"Assortative", "OneSidedAssortative", "EgalitarianUnstable", "GenericUnique", "LargeUnique"}
# classes whose structure must not be hidden by relabelling (validate reads it)
_NO_RELABEL = {"Assortative", "Embedded4x4"}


def generate(spec: MarketSpec) -> Market:
    """Search-and-test generation; a pure function of ``spec``.

    Raises ``GenerationBudgetExhausted`` if no candidate passes ``validate``
    within ``spec.budget`` attempts.
    """
    rng = random.Random(f"decmatch-market|{spec.kind}|{spec.seed}")
    gen = _GENERATORS[spec.kind]
    for attempt in range(1, spec.budget + 1):
        cand = gen(rng, spec)
        if cand is None:
            continue
        foods, colors = cand.food_lists, cand.color_lists
        extra = dict(cand.extra)
        if spec.kind not in _NO_RELABEL:
            designed_keys = [k for k in ("designated", "designed_stable") if k in extra]
            foods, colors, moved = _relabel(rng, foods, colors, [extra[k] for k in designed_keys])
            for key, val in zip(designed_keys, moved):
                extra[key] = val
        meta = spec.to_dict()
        meta.update(extra)
        if cand.offsets is not None:
            meta["offsets"] = list(cand.offsets)
        meta["attempts"] = attempt
        market = cardinalize(foods, colors, spec, cand.offsets).with_spec(meta)
        if spec.kind in _UNIQUE and deferred_acceptance(market, FOOD).matching != deferred_acceptance(market, COLOR).matching:
            continue
        if validate(spec, market).passed:
            return market
    raise GenerationBudgetExhausted(spec.budget, f"no {spec.kind} market after {spec.budget} attempts")


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class Clause:
    name: str
    passed: bool
    measured: object = None


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    clauses: tuple[Clause, ...]
    measures: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failures(self) -> list[str]:
        return [c.name for c in self.clauses if not c.passed]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "clauses": [{"name": c.name, "passed": c.passed, "measured": c.measured} for c in self.clauses],
            "measures": self.measures,
        }


def _partner_counts(ss: StableSet) -> tuple[list[int], list[int]]:
    return [len(p) for p in ss.food_partners], [len(p) for p in ss.color_partners]


def _cov(market: Market, m: Matching) -> float | None:
    return payoff_stats(market, m).coefficient_of_variation


def _common_ranking(lists: np.ndarray) -> bool:
    return all((row == lists[0]).all() for row in lists)


def validate(spec: MarketSpec, market: Market) -> ValidationReport:
    """Check a market against the contract of ``spec.kind``; failures are data."""
    clauses: list[Clause] = []
    add = lambda name, ok, measured=None: clauses.append(Clause(name, bool(ok), measured))  # noqa: E731
    n = spec.n
    add("size", market.n_f == n and market.n_c == n, [market.n_f, market.n_c])
    meta = market.spec or {}
    if not clauses[0].passed:
        return ValidationReport(spec.kind, tuple(clauses), {})

    prefs = market.preferences
    rebuilt = cardinalize(prefs.food_lists, prefs.color_lists, spec, meta.get("offsets"))
    add(
        "cardinalization",
        np.array_equal(rebuilt.payoff_f, market.payoff_f) and np.array_equal(rebuilt.payoff_c, market.payoff_c),
    )
    ss = enumerate_stable_matchings(market)
    fc, cc = _partner_counts(ss)
    measures = {
        "n_stable": len(ss),
        "food_partner_counts": fc,
        "color_partner_counts": cc,
        "avg_partners": (sum(fc) + sum(cc)) / (len(fc) + len(cc)),
    }
    cov_f, cov_c = _cov(market, ss.food_optimal), _cov(market, ss.color_optimal)
    measures["cov_food_optimal"] = cov_f
    measures["cov_color_optimal"] = cov_c
    measures["cov_ratio"] = cov_f / cov_c if cov_f is not None and cov_c else None
    measures["alignment_corr"] = alignment_correlation(market, ss.food_optimal)
    kind = spec.kind

    if kind == "Assortative":
        add("common_ranking_both_sides", _common_ranking(prefs.food_lists) and _common_ranking(prefs.color_lists))
        add("unique_stable", len(ss) == 1, len(ss))
        top_f, top_c = prefs.color_lists[0], prefs.food_lists[0]
        assortative = all(ss.food_optimal.food[int(top_f[k])] == int(top_c[k]) for k in range(n))
        add("assortative_stable_matching", assortative)
    elif kind == "OneSidedAssortative":
        add("one_side_common_ranking", _common_ranking(prefs.food_lists) or _common_ranking(prefs.color_lists))
        add("unique_stable", len(ss) == 1, len(ss))
    elif kind == "EgalitarianUnstable":
        eta = meta.get("designated")
        if eta is None:
            add("designated_matching_present", False)
        else:
            m = Matching(tuple(int(c) for c in eta), n)
            st = payoff_stats(market, m)
            uf = [market.food_payoff(f, m.food[f]) for f in range(n)]
            uc = [market.color_payoff(c, m.color[c]) for c in range(n)]
            add("designated_complete", m.is_complete())
            add("designated_egalitarian", len(set(uf + uc)) == 1, sorted(set(uf + uc)))
            bp = blocking_pairs(market, m)
            add("designated_unstable", len(bp) >= 1, len(bp))
            add("unique_stable", len(ss) == 1, len(ss))
            w_stable = payoff_stats(market, ss.food_optimal).total_welfare
            gap = abs(st.total_welfare - w_stable) / w_stable
            measures["welfare_gap"] = gap
            add("welfare_within_5pct", gap <= WELFARE_TOLERANCE, gap)
    elif kind in ("GenericUnique", "LargeUnique"):
        add("unique_stable", len(ss) == 1, len(ss))
        if spec.target_corr is not None:
            rho = measures["alignment_corr"]
            add("alignment_corr", rho is not None and abs(rho - spec.target_corr) <= CORR_TOLERANCE, rho)
    elif kind == "Embedded4x4":
        blocks = meta.get("blocks") or [list(range(4)), list(range(4, 8))]
        block_of = {a: i for i, blk in enumerate(blocks) for a in blk}
        ok = True
        for f in range(n):
            within = [market.payoff_f[f, c] for c in range(n) if block_of[c] == block_of[f]]
            cross = [market.payoff_f[f, c] for c in range(n) if block_of[c] != block_of[f]]
            ok &= max(cross) < min(within)
        for c in range(n):
            within = [market.payoff_c[f, c] for f in range(n) if block_of[f] == block_of[c]]
            cross = [market.payoff_c[f, c] for f in range(n) if block_of[f] != block_of[c]]
            ok &= max(cross) < min(within)
        add("cross_block_below_within", ok)
        add("four_stable_matchings", len(ss) == 4, len(ss))
        per_block = []
        for blk in blocks:
            per_block.append(sorted(fc[a] for a in blk))
            per_block.append(sorted(cc[a] for a in blk))
        add("block_partner_counts", all(p == [1, 2, 2, 2] for p in per_block), per_block)
    elif kind == "FiveSM_ThreeSP":
        add("five_stable_matchings", len(ss) == 5, len(ss))
        add("three_partners_each", set(fc + cc) == {3}, sorted(set(fc + cc)))
    elif kind == "LargeThreeSM":
        counts = fc + cc
        add("three_stable_matchings", len(ss) == 3, len(ss))
        add("partners_two_or_three", set(counts) <= {2, 3}, sorted(set(counts)))
        share = counts.count(3) / len(counts)
        measures["share_three_partners"] = share
        add("two_thirds_three_partners", share >= 2 / 3, share)
    return ValidationReport(kind, tuple(clauses), measures)


def spec_of(market: Market) -> MarketSpec | None:
    """The generating spec recorded in a market file, if any."""
    if not market.spec or "kind" not in market.spec:
        return None
    return MarketSpec.from_dict(market.spec)
