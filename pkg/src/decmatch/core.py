"""Stability theory for one-to-one two-sided markets.

Agents on the two sides are called *foods* and *colors*.  Payoffs are integer
cents; being unmatched is worth exactly 0 and every listed payoff is strictly
positive, so every partner is acceptable.
"""
from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicatePayoff,
    EnumerationCapExceeded,
    InternalInconsistency,
    InvalidMarket,
)

FOOD = "F"
COLOR = "C"
UNMATCHED = -1
ENUMERATION_CAP = 20


def _freeze(a) -> np.ndarray:
    arr = np.array(a, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Market:
    """A balanced (or unbalanced) market with cardinal payoffs in cents.

    ``payoff_f[f, c]`` is what food ``f`` earns when matched to color ``c``;
    ``payoff_c[f, c]`` is what color ``c`` earns when matched to food ``f``.
    """

    payoff_f: np.ndarray
    payoff_c: np.ndarray
    labels: dict | None = None
    spec: dict | None = None

    def __post_init__(self):
        pf, pc = _freeze(self.payoff_f), _freeze(self.payoff_c)
        if pf.ndim != 2 or pf.shape != pc.shape or 0 in pf.shape:
            raise InvalidMarket(f"payoff matrices must share a 2-d shape, got {pf.shape} and {pc.shape}")
        if (pf <= 0).any() or (pc <= 0).any():
            raise InvalidMarket("all payoffs must be strictly positive")
        object.__setattr__(self, "payoff_f", pf)
        object.__setattr__(self, "payoff_c", pc)
        # strictness is checked here so no Market with ties can exist
        self.preferences  # noqa: B018

    @property
    def n_f(self) -> int:
        return self.payoff_f.shape[0]

    @property
    def n_c(self) -> int:
        return self.payoff_f.shape[1]

    @cached_property
    def preferences(self) -> "Preferences":
        return derive_preferences(self)

    @cached_property
    def market_id(self) -> str:
        body = json.dumps(
            {"payoff_f": self.payoff_f.tolist(), "payoff_c": self.payoff_c.tolist()},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def food_payoff(self, f: int, c: int) -> int:
        return 0 if c == UNMATCHED else int(self.payoff_f[f, c])

    def color_payoff(self, c: int, f: int) -> int:
        return 0 if f == UNMATCHED else int(self.payoff_c[f, c])

    def with_spec(self, spec: dict | None) -> "Market":
        return Market(self.payoff_f, self.payoff_c, self.labels, spec)


@dataclass(frozen=True, eq=False)
class Preferences:
    """Ordinal view of a market.

    ``food_lists[f]`` lists colors from best to worst; ``food_rank[f, c]`` is
    the 1-based position of ``c`` in that list.  Same for colors.
    """

    food_lists: np.ndarray
    color_lists: np.ndarray
    food_rank: np.ndarray
    color_rank: np.ndarray


def _order_desc(values: np.ndarray, who: str) -> np.ndarray:
    if len(np.unique(values)) != len(values):
        raise DuplicatePayoff(f"{who} has tied payoffs {values.tolist()}")
    return np.argsort(-values, kind="stable")


def derive_preferences(market: Market) -> Preferences:
    pf, pc = np.asarray(market.payoff_f), np.asarray(market.payoff_c)
    n_f, n_c = pf.shape
    food_lists = np.empty((n_f, n_c), dtype=np.int64)
    color_lists = np.empty((n_c, n_f), dtype=np.int64)
    for f in range(n_f):
        food_lists[f] = _order_desc(pf[f], f"food {f}")
    for c in range(n_c):
        color_lists[c] = _order_desc(pc[:, c], f"color {c}")
    food_rank = np.empty_like(food_lists)
    color_rank = np.empty_like(color_lists)
    rows = np.arange(n_f)[:, None]
    food_rank[rows, food_lists] = np.arange(1, n_c + 1)
    rows = np.arange(n_c)[:, None]
    color_rank[rows, color_lists] = np.arange(1, n_f + 1)
    for a in (food_lists, color_lists, food_rank, color_rank):
        a.setflags(write=False)
    return Preferences(food_lists, color_lists, food_rank, color_rank)


@dataclass(frozen=True)
class Matching:
    """Partial one-to-one assignment stored as each food's partner (-1 if none)."""

    food: tuple[int, ...]
    n_c: int

    def __post_init__(self):
        seen = set()
        for c in self.food:
            if c == UNMATCHED:
                continue
            if not 0 <= c < self.n_c or c in seen:
                raise InvalidMarket(f"not a matching: {self.food}")
            seen.add(c)

    @classmethod
    def empty(cls, n_f: int, n_c: int) -> "Matching":
        return cls((UNMATCHED,) * n_f, n_c)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], n_f: int, n_c: int) -> "Matching":
        food = [UNMATCHED] * n_f
        for f, c in pairs:
            if food[f] != UNMATCHED:
                raise InvalidMarket(f"food {f} matched twice")
            food[f] = c
        return cls(tuple(food), n_c)

    @cached_property
    def color(self) -> tuple[int, ...]:
        out = [UNMATCHED] * self.n_c
        for f, c in enumerate(self.food):
            if c != UNMATCHED:
                out[c] = f
        return tuple(out)

    @property
    def n_f(self) -> int:
        return len(self.food)

    def pairs(self) -> list[tuple[int, int]]:
        return [(f, c) for f, c in enumerate(self.food) if c != UNMATCHED]

    def partner(self, side: str, idx: int) -> int:
        return self.food[idx] if side == FOOD else self.color[idx]

    @property
    def n_pairs(self) -> int:
        return sum(1 for c in self.food if c != UNMATCHED)

    def is_complete(self) -> bool:
        return self.n_pairs == min(self.n_f, self.n_c)

    def digest(self) -> str:
        return state_digest(self.food)

    def __str__(self) -> str:
        return "{" + ", ".join(f"(f{f + 1},c{c + 1})" for f, c in self.pairs()) + "}"


def state_digest(food_partners: Sequence[int]) -> str:
    """Canonical 64-bit digest of a matching state (used for recurrence checks)."""
    body = ",".join(str(int(c)) for c in food_partners).encode()
    return hashlib.blake2b(body, digest_size=8).hexdigest()


# ---------------------------------------------------------------- stability


def blocking_pairs(market: Market, matching: Matching) -> frozenset[tuple[int, int]]:
    pf, pc = market.payoff_f, market.payoff_c
    fm, cm = matching.food, matching.color
    uf = [market.food_payoff(f, fm[f]) for f in range(market.n_f)]
    uc = [market.color_payoff(c, cm[c]) for c in range(market.n_c)]
    return frozenset(
        (f, c)
        for f in range(market.n_f)
        for c in range(market.n_c)
        if pf[f, c] > uf[f] and pc[f, c] > uc[c]
    )


def is_stable(market: Market, matching: Matching) -> bool:
    return not blocking_pairs(market, matching)


@dataclass(frozen=True)
class DAResult:
    matching: Matching
    offers_made: int
    matches_formed: int


def deferred_acceptance(market: Market, proposing_side: str = FOOD) -> DAResult:
    """Gale-Shapley deferred acceptance; returns the proposing side's optimal stable matching."""
    prefs = market.preferences
    if proposing_side == FOOD:
        lists, recv_rank, n_prop, n_recv = prefs.food_lists, prefs.color_rank, market.n_f, market.n_c
    elif proposing_side == COLOR:
        lists, recv_rank, n_prop, n_recv = prefs.color_lists, prefs.food_rank, market.n_c, market.n_f
    else:
        raise ValueError(f"proposing_side must be {FOOD!r} or {COLOR!r}")
    held = [UNMATCHED] * n_recv
    nxt = [0] * n_prop
    free = list(range(n_prop - 1, -1, -1))
    offers = matches = 0
    while free:
        p = free.pop()
        if nxt[p] >= n_recv:
            continue
        r = int(lists[p, nxt[p]])
        nxt[p] += 1
        offers += 1
        cur = held[r]
        if cur == UNMATCHED or recv_rank[r, p] < recv_rank[r, cur]:
            held[r] = p
            matches += 1
            if cur != UNMATCHED:
                free.append(cur)
        else:
            free.append(p)
    pairs = [(p, r) if proposing_side == FOOD else (r, p) for r, p in enumerate(held) if p != UNMATCHED]
    return DAResult(Matching.from_pairs(pairs, market.n_f, market.n_c), offers, matches)


# ------------------------------------------------------------- enumeration


@dataclass(frozen=True)
class StableSet:
    """All stable matchings; first is food-optimal, last is color-optimal.

    ``food_partners[f]`` holds f's distinct stable partners from most to least
    preferred; ``color_partners`` likewise.
    """

    matchings: tuple[Matching, ...]
    food_partners: tuple[tuple[int, ...], ...]
    color_partners: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.matchings)

    def __contains__(self, m: Matching) -> bool:
        return m in self._members

    @cached_property
    def _members(self) -> frozenset:
        return frozenset(self.matchings)

    @property
    def food_optimal(self) -> Matching:
        return self.matchings[0]

    @property
    def color_optimal(self) -> Matching:
        return self.matchings[-1]

    @cached_property
    def stable_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset((f, c) for f, cs in enumerate(self.food_partners) for c in cs)

    def partners(self, side: str, idx: int) -> tuple[int, ...]:
        return self.food_partners[idx] if side == FOOD else self.color_partners[idx]


def _break_marriage(food_lists, food_rank0, color_rank0, fp: list, cp: list, i: int):
    """Try to produce the next stable matching in which food ``i`` is worse off.

    Food ``i`` leaves its partner ``w`` and resumes proposing; ``w`` only takes
    a food she strictly prefers to ``i``.  Fails when a food runs out of
    colors, the chain reaches a color that was unmatched, or a food with a
    smaller index than ``i`` would be displaced (that matching is reached from
    a different branch, which keeps the enumeration duplicate-free).
    """
    n_c = len(cp)
    fp, cp = list(fp), list(cp)
    w = fp[i]
    cut = color_rank0[w][i]
    nxt = [food_rank0[m][fp[m]] + 1 if fp[m] != UNMATCHED else n_c for m in range(len(fp))]
    fp[i] = UNMATCHED
    cp[w] = UNMATCHED
    m = i
    while True:
        if nxt[m] >= n_c:
            return None
        x = food_lists[m][nxt[m]]
        nxt[m] += 1
        if x == w:
            if color_rank0[w][m] < cut:
                fp[m], cp[w] = w, m
                return fp, cp
            continue
        cur = cp[x]
        if cur == UNMATCHED:
            return None
        if color_rank0[x][m] < color_rank0[x][cur]:
            if cur < i:
                return None
            fp[m], cp[x] = x, m
            fp[cur] = UNMATCHED
            m = cur


def enumerate_stable_matchings(market: Market, cap: int = ENUMERATION_CAP) -> StableSet:
    """Every stable matching, via recursive break-marriage from the food-optimal one."""
    if max(market.n_f, market.n_c) > cap:
        raise EnumerationCapExceeded(f"market size {max(market.n_f, market.n_c)} exceeds cap {cap}")
    prefs = market.preferences
    food_lists = prefs.food_lists.tolist()
    food_rank0 = (prefs.food_rank - 1).tolist()
    color_rank0 = (prefs.color_rank - 1).tolist()

    start = deferred_acceptance(market, FOOD).matching
    fp0 = list(start.food)
    cp0 = list(start.color)
    found: list[tuple[int, ...]] = []
    stack = [(fp0, cp0, 0)]
    while stack:
        fp, cp, k = stack.pop()
        found.append(tuple(fp))
        children = []
        for i in range(k, market.n_f):
            if fp[i] == UNMATCHED:
                continue
            nxt = _break_marriage(food_lists, food_rank0, color_rank0, fp, cp, i)
            if nxt is not None:
                children.append((nxt[0], nxt[1], i))
        # reversed so the depth-first order matches the recursive formulation
        stack.extend(reversed(children))

    mu_c = deferred_acceptance(market, COLOR).matching.food
    if len(set(found)) != len(found) or mu_c not in found:
        raise InternalInconsistency("stable-set enumeration produced duplicates or missed the color-optimal matching")
    found.remove(mu_c)
    found.append(mu_c)
    matchings = tuple(Matching(f, market.n_c) for f in found)
    return _with_partner_lists(market, matchings)


def _with_partner_lists(market: Market, matchings: Sequence[Matching]) -> StableSet:
    prefs = market.preferences
    fparts = []
    for f in range(market.n_f):
        cs = {m.food[f] for m in matchings} - {UNMATCHED}
        fparts.append(tuple(sorted(cs, key=lambda c: prefs.food_rank[f, c])))
    cparts = []
    for c in range(market.n_c):
        fs = {m.color[c] for m in matchings} - {UNMATCHED}
        cparts.append(tuple(sorted(fs, key=lambda f: prefs.color_rank[c, f])))
    return StableSet(tuple(matchings), tuple(fparts), tuple(cparts))


def median_stable_matching(stable_set: StableSet, market: Market | None = None) -> tuple[Matching, ...]:
    """Generalized median(s): one matching for odd K, the two middle ones for even K.

    Each food receives the median of its partners across all K stable
    matchings, counted with multiplicity and ordered by its own preference.
    """
    K = len(stable_set)
    positions = [(K + 1) // 2] if K % 2 else [K // 2, K // 2 + 1]
    n_f = stable_set.matchings[0].n_f
    n_c = stable_set.matchings[0].n_c
    out = []
    for pos in positions:
        food = []
        for f in range(n_f):
            order = stable_set.food_partners[f]
            if not order:
                food.append(UNMATCHED)
                continue
            seq = sorted((m.food[f] for m in stable_set.matchings), key=order.index)
            food.append(seq[pos - 1])
        try:
            med = Matching(tuple(food), n_c)
        except InvalidMarket as exc:
            raise InternalInconsistency(f"generalized median #{pos} is not a matching") from exc
        if med not in stable_set:
            raise InternalInconsistency(f"generalized median #{pos} is not in the stable set")
        # the color side must see its own (K+1-pos)-th partner
        for c in range(n_c):
            order = stable_set.color_partners[c]
            if not order:
                continue
            seq = sorted((m.color[c] for m in stable_set.matchings), key=order.index)
            if seq[K - pos] != med.color[c]:
                raise InternalInconsistency(f"generalized median #{pos} disagrees on color {c}")
        out.append(med)
    return tuple(out)


@dataclass(frozen=True)
class MatchingClass:
    label: str
    coincides_with_median: bool
    by_food: tuple[frozenset[str], ...] = field(default=())


LABELS = ("unique_stable", "food_optimal", "color_optimal", "median", "other_stable", "unstable")


def classify_matching(stable_set: StableSet, matching: Matching) -> MatchingClass:
    """Label a matching relative to the stable set.

    Extremal labels win over ``median`` when they coincide; the coincidence is
    reported separately.  ``by_food`` tags each matched pair with any of
    ``food_optimal``, ``color_optimal``, ``median``, ``stable`` or ``unstable``.
    """
    medians = median_stable_matching(stable_set)
    median_pairs = set()
    for m in medians:
        median_pairs.update(m.pairs())
    mu_f, mu_c = stable_set.food_optimal, stable_set.color_optimal
    by_food = []
    for f, c in enumerate(matching.food):
        tags = set()
        if c != UNMATCHED:
            if mu_f.food[f] == c:
                tags.add("food_optimal")
            if mu_c.food[f] == c:
                tags.add("color_optimal")
            if (f, c) in median_pairs:
                tags.add("median")
            tags.add("stable" if (f, c) in stable_set.stable_pairs else "unstable")
        by_food.append(frozenset(tags))
    by_food = tuple(by_food)

    is_median = matching in medians
    if matching not in stable_set:
        return MatchingClass("unstable", False, by_food)
    if len(stable_set) == 1:
        return MatchingClass("unique_stable", True, by_food)
    if matching == mu_f:
        return MatchingClass("food_optimal", is_median, by_food)
    if matching == mu_c:
        return MatchingClass("color_optimal", is_median, by_food)
    if is_median:
        return MatchingClass("median", True, by_food)
    return MatchingClass("other_stable", False, by_food)


# ----------------------------------------------------------------- payoffs


@dataclass(frozen=True)
class PayoffStats:
    total_welfare: int
    food_welfare: int
    color_welfare: int
    mean: float
    coefficient_of_variation: float | None
    gini: float | None

    @property
    def degenerate(self) -> bool:
        return self.coefficient_of_variation is None


def agent_payoffs(market: Market, matching: Matching) -> tuple[list[int], list[int]]:
    uf = [market.food_payoff(f, matching.food[f]) for f in range(market.n_f)]
    uc = [market.color_payoff(c, matching.color[c]) for c in range(market.n_c)]
    return uf, uc


def gini(values: Sequence[float]) -> float | None:
    vals = sorted(values)
    n = len(vals)
    total = sum(vals)
    if n == 0 or total == 0:
        return None
    weighted = sum((2 * (i + 1) - n - 1) * v for i, v in enumerate(vals))
    return weighted / (n * total)


def payoff_stats(market: Market, matching: Matching) -> PayoffStats:
    uf, uc = agent_payoffs(market, matching)
    allp = uf + uc
    total = sum(allp)
    mean = total / len(allp)
    cov = statistics.pstdev(allp) / mean if mean > 0 else None
    return PayoffStats(total, sum(uf), sum(uc), mean, cov, gini(allp))


def alignment_correlation(market: Market, matching: Matching) -> float | None:
    """Correlation across pairs of (food payoff, its partner's payoff)."""
    pairs = matching.pairs()
    if len(pairs) < 2:
        return None
    a = np.array([market.payoff_f[f, c] for f, c in pairs], dtype=float)
    b = np.array([market.payoff_c[f, c] for f, c in pairs], dtype=float)
    if a.std() == 0 or b.std() == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


# -------------------------------------------------------------- file format


def market_to_dict(market: Market) -> dict:
    out = {
        "n_f": market.n_f,
        "n_c": market.n_c,
        "payoff_f": market.payoff_f.tolist(),
        "payoff_c": market.payoff_c.tolist(),
    }
    if market.labels:
        out["labels"] = market.labels
    if market.spec:
        out["spec"] = market.spec
    return out


def market_from_dict(d: dict) -> Market:
    try:
        pf = np.array(d["payoff_f"], dtype=np.int64)
        pc = np.array(d["payoff_c"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidMarket(f"malformed market document: {exc}") from exc
    if pf.shape != (d.get("n_f"), d.get("n_c")):
        raise InvalidMarket(f"payoff_f shape {pf.shape} disagrees with n_f/n_c")
    return Market(pf, pc, d.get("labels"), d.get("spec"))


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def save_market(market: Market, path) -> None:
    Path(path).write_text(dumps_canonical(market_to_dict(market)))


def load_market(path) -> Market:
    return market_from_dict(json.loads(Path(path).read_text()))
