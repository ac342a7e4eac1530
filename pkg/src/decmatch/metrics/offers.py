"""Offer-level classification and per-transcript volume statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from ..core import COLOR, FOOD, UNMATCHED, Market, Matching, StableSet, classify_matching, is_stable
from ..dynamics import OfferEvent, Transcript
from .cycles import CycleReport, match_level_cycles, repeated_matchings
from .stability import pct_pairs_without_blocking

SP_RANKS = ("best", "median", "worst")


@dataclass(frozen=True)
class OfferFlags:
    to_blocking_pair: bool
    only_proposer_beneficial: bool
    repeated: bool
    to_previous_match: bool
    proposer_active: bool
    downward: bool
    gale_shapley: bool
    skips_someone: bool
    sp_rank: str | None = None
    to_stable_pair: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class OfferTracker:
    """Running market state plus each agent's offer history.

    ``flags`` answers queries about a hypothetical offer in the current
    state; ``record`` then applies an actual event.  Bilateral events (pairs
    formed by mutual consent) count as an offer made by both members.
    """

    def __init__(self, market: Market, stable_set: StableSet | None = None):
        self.market = market
        self.stable_set = stable_set
        prefs = market.preferences
        n_f, n_c = market.n_f, market.n_c
        self.pay = (market.payoff_f.tolist(), market.payoff_c.T.tolist())  # pay[side][agent][other]
        self.lists = (prefs.food_lists.tolist(), prefs.color_lists.tolist())
        self.rank = (prefs.food_rank.tolist(), prefs.color_rank.tolist())
        self.partner = ([UNMATCHED] * n_f, [UNMATCHED] * n_c)
        self.offered = ([[0] * n_c for _ in range(n_f)], [[0] * n_f for _ in range(n_c)])
        self.worst_offered = ([0] * n_f, [0] * n_c)  # largest rank offered so far, 0 = none
        self.received = ([0] * n_f, [0] * n_c)
        self.ever_matched: set[tuple[int, int]] = set()
        self._sp = None
        if stable_set is not None:
            self._sp = (stable_set.food_partners, stable_set.color_partners)

    # state helpers
    def payoff(self, side: int, agent: int) -> int:
        p = self.partner[side][agent]
        return self.pay[side][agent][p] if p != UNMATCHED else 0

    def gain(self, side: int, agent: int, other: int) -> int:
        """Payoff change for ``agent`` if matched to ``other``; 0 for its own partner."""
        if self.partner[side][agent] == other:
            return 0
        return self.pay[side][agent][other] - self.payoff(side, agent)

    def pair(self, side: int, proposer: int, receiver: int) -> tuple[int, int]:
        return (proposer, receiver) if side == 0 else (receiver, proposer)

    def flags(self, side: int, proposer: int, receiver: int) -> OfferFlags:
        other = 1 - side
        g_p = self.gain(side, proposer, receiver)
        g_r = self.gain(other, receiver, proposer)
        rank = self.rank[side][proposer]
        lst = self.lists[side][proposer]
        offered = self.offered[side][proposer]
        r_rec = rank[receiver]
        cur = self.partner[side][proposer]

        active = False
        for a in lst:
            if a == cur:
                break
            if not offered[a]:
                active = True
                break
        skips = any(not offered[a] for a in lst[: r_rec - 1])
        downward = self.worst_offered[side][proposer] <= r_rec
        gs = downward and not skips and not offered[receiver]
        pair = self.pair(side, proposer, receiver)

        sp_rank = to_sp = None
        if self._sp is not None:
            partners = self._sp[side][proposer]
            to_sp = receiver in partners
            if len(partners) == 3:
                sp_rank = SP_RANKS[partners.index(receiver)] if to_sp else "nonstable"
        return OfferFlags(
            to_blocking_pair=g_p > 0 and g_r > 0,
            only_proposer_beneficial=g_p > 0 and g_r <= 0,
            repeated=bool(offered[receiver]),
            to_previous_match=pair in self.ever_matched,
            proposer_active=active,
            downward=downward,
            gale_shapley=gs,
            skips_someone=skips,
            sp_rank=sp_rank,
            to_stable_pair=to_sp,
        )

    def _note_offer(self, side: int, proposer: int, receiver: int) -> None:
        self.offered[side][proposer][receiver] += 1
        r = self.rank[side][proposer][receiver]
        if r > self.worst_offered[side][proposer]:
            self.worst_offered[side][proposer] = r
        self.received[1 - side][receiver] += 1

    def record(self, side: int, proposer: int, receiver: int, accepted: bool, bilateral: bool = False) -> None:
        self._note_offer(side, proposer, receiver)
        if bilateral:
            self._note_offer(1 - side, receiver, proposer)
        if accepted:
            f, c = self.pair(side, proposer, receiver)
            fp, cp = self.partner
            if fp[f] != UNMATCHED:
                cp[fp[f]] = UNMATCHED
            if cp[c] != UNMATCHED:
                fp[cp[c]] = UNMATCHED
            fp[f], cp[c] = c, f
            self.ever_matched.add((f, c))

    def matching(self) -> Matching:
        return Matching(tuple(self.partner[0]), self.market.n_c)


def _side(ev: OfferEvent) -> int:
    return 0 if ev.proposer_side == FOOD else 1


def iter_offer_flags(
    market: Market, transcript: Transcript, stable_set: StableSet | None = None, both_sides: bool = True
) -> Iterator[tuple[int, int, int, int, bool, OfferFlags, OfferFlags | None]]:
    """Yield ``(index, side, proposer, receiver, accepted, flags, mirror)`` per event.

    ``mirror`` is the classification from the receiver's point of view for
    bilateral events (``None`` otherwise or when ``both_sides`` is false).
    """
    tr = OfferTracker(market, stable_set)
    sides, props, recs = transcript.sides.tolist(), transcript.proposers.tolist(), transcript.receivers.tolist()
    acc, bil = transcript.accepted.tolist(), transcript.bilateral.tolist()
    for i in range(len(sides)):
        s, p, r = sides[i], props[i], recs[i]
        fl = tr.flags(s, p, r)
        mirror = tr.flags(1 - s, r, p) if (bil[i] and both_sides) else None
        yield i, s, p, r, bool(acc[i]), fl, mirror
        tr.record(s, p, r, acc[i], bil[i])


def classify_offer(
    market: Market, history: Transcript, offer: OfferEvent, stable_set: StableSet | None = None
) -> OfferFlags:
    """Classify ``offer`` given every event before it in ``history``."""
    tr = OfferTracker(market, stable_set)
    k = min(offer.index, len(history))
    sides, props, recs = history.sides.tolist(), history.proposers.tolist(), history.receivers.tolist()
    acc, bil = history.accepted.tolist(), history.bilateral.tolist()
    for i in range(k):
        tr.record(sides[i], props[i], recs[i], acc[i], bil[i])
    return tr.flags(_side(offer), offer.proposer, offer.receiver)


def offer_table(market: Market, transcript: Transcript, stable_set: StableSet | None = None) -> list[dict]:
    """One row per offer (per orientation for bilateral events) with its flags."""
    rows = []
    for i, s, p, r, a, fl, mirror in iter_offer_flags(market, transcript, stable_set):
        for side, prop, rec, flags in ((s, p, r, fl), (1 - s, r, p, mirror)):
            if flags is None:
                continue
            row = {
                "index": i,
                "proposer_side": FOOD if side == 0 else COLOR,
                "proposer": prop,
                "receiver": rec,
                "accepted": a,
                "weight": 0.5 if mirror is not None else 1.0,
            }
            row.update(flags.to_dict())
            rows.append(row)
    return rows


# ------------------------------------------------------------------ summary


_FLAG_COLUMNS = (
    ("to_blocking_pair", "pct_to_blocking_pair"),
    ("only_proposer_beneficial", "pct_only_proposer_beneficial"),
    ("repeated", "pct_repeated_offers"),
    ("to_previous_match", "pct_to_previous_match"),
    ("proposer_active", "pct_proposer_active"),
    ("downward", "pct_downward"),
    ("gale_shapley", "pct_gale_shapley"),
    ("skips_someone", "pct_skips_someone"),
    ("to_stable_pair", "pct_to_stable_pair"),
)


def _pct(num: float, den: float) -> float | None:
    return None if den == 0 else 100.0 * num / den


@dataclass
class _Acc:
    """Weighted counters for a block of offers."""

    offers: float = 0.0
    accepted: float = 0.0
    flag_n: dict = field(default_factory=dict)
    flag_acc: dict = field(default_factory=dict)

    def add(self, flags: OfferFlags, accepted: bool, w: float) -> None:
        self.offers += w
        self.accepted += w * accepted
        for name, _ in _FLAG_COLUMNS:
            if getattr(flags, name):
                self.flag_n[name] = self.flag_n.get(name, 0.0) + w
                self.flag_acc[name] = self.flag_acc.get(name, 0.0) + w * accepted
        if flags.sp_rank is not None:
            key = "sp_" + flags.sp_rank
            self.flag_n[key] = self.flag_n.get(key, 0.0) + w
            self.flag_acc[key] = self.flag_acc.get(key, 0.0) + w * accepted
            self.flag_n["sp_eligible"] = self.flag_n.get("sp_eligible", 0.0) + w

    def report(self, has_sp: bool, has_stable: bool) -> dict:
        out = {}
        for name, col in _FLAG_COLUMNS:
            if name == "to_stable_pair" and not has_stable:
                continue
            n = self.flag_n.get(name, 0.0)
            out[col] = _pct(n, self.offers)
            out[col.replace("pct_", "pct_accepted_given_", 1)] = _pct(self.flag_acc.get(name, 0.0), n)
        if has_sp:
            elig = self.flag_n.get("sp_eligible", 0.0)
            for r in SP_RANKS:
                n = self.flag_n.get("sp_" + r, 0.0)
                out[f"pct_to_{r}_stable_partner"] = _pct(n, elig)
                out[f"pct_accepted_given_{r}_stable_partner"] = _pct(self.flag_acc.get("sp_" + r, 0.0), n)
        return out


@dataclass
class _Formations:
    n: int = 0
    repeated: int = 0
    broke: int = 0
    final: int = 0
    final_broke: int = 0
    stable: int = 0
    stable_broke: int = 0

    def report(self) -> dict:
        return {
            "pct_matches_repeated": _pct(self.repeated, self.n),
            "pct_matches_break": _pct(self.broke, self.n),
            "pct_break_given_final": _pct(self.final_broke, self.final),
            "pct_break_given_stable": _pct(self.stable_broke, self.stable),
        }


def _times(transcript: Transcript) -> list[float]:
    if transcript.timed:
        return [float(t) for t in transcript.t_millis.tolist()]
    return [float(i) for i in range(len(transcript))]


def terciles(transcript: Transcript) -> list[int]:
    """Tercile (0, 1, 2) of every event on ``[0, time of last offer]``."""
    times = _times(transcript)
    if not times:
        return []
    last = times[-1]
    if last <= 0:
        return [0] * len(times)
    return [min(2, int(3 * t / last)) for t in times]


def match_breaks(transcript: Transcript) -> list[bool]:
    """For every accepted event, whether one of the two is later matched to someone else."""
    foods, colors = transcript.foods.tolist(), transcript.colors.tolist()
    acc = transcript.accepted.tolist()
    later_f: dict[int, set] = {}
    later_c: dict[int, set] = {}
    out = []
    for i in range(len(acc) - 1, -1, -1):
        if not acc[i]:
            continue
        f, c = foods[i], colors[i]
        sf, sc = later_f.setdefault(f, set()), later_c.setdefault(c, set())
        out.append(bool(sf - {c}) or bool(sc - {f}))
        sf.add(c)
        sc.add(f)
    out.reverse()
    return out


@dataclass(frozen=True)
class TranscriptSummary:
    offers: int
    matches: int
    pct_accepted: float | None
    offers_per_minute: float | None
    matches_per_minute: float | None
    repeated_matching_count: int
    repeated_matching_distinct: int
    cycles: CycleReport
    final_stable: bool
    pct_final_pairs_stable: float | None
    final_class: str | None
    final_labels: dict | None
    terminated_by: str
    overall: dict
    by_tercile: tuple[dict, dict, dict]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["by_tercile"] = list(self.by_tercile)
        return d

    def flat(self) -> dict:
        """Single-level mapping used for tabular export and batch aggregation."""
        out = {
            "offers": self.offers,
            "matches": self.matches,
            "pct_accepted": self.pct_accepted,
            "offers_per_minute": self.offers_per_minute,
            "matches_per_minute": self.matches_per_minute,
            "repeated_matchings": self.repeated_matching_count,
            "repeated_matchings_distinct": self.repeated_matching_distinct,
            "cycle_count": self.cycles.cycle_count,
            "avg_cycle_length": self.cycles.avg_length,
            "pct_final_matching_stable": 100.0 if self.final_stable else 0.0,
            "pct_final_pairs_stable": self.pct_final_pairs_stable,
            "step_capped": 1.0 if self.terminated_by != "Natural" else 0.0,
        }
        # conditional on a stable final matching; absent otherwise
        for key in ("median", "non_extremal", "food_optimal", "color_optimal"):
            ok = self.final_stable and self.final_labels is not None
            out[f"pct_{key}_given_stable"] = (100.0 if self.final_labels[key] else 0.0) if ok else None
        out.update(self.overall)
        return out


def _block(tr_slice_idx, flags_rows, formations_rows, minutes, has_sp, has_stable) -> dict:
    acc = _Acc()
    for fl, a, w in (flags_rows[i] for i in tr_slice_idx):
        for flags, weight in zip(fl, w):
            acc.add(flags, a, weight)
    form = _Formations()
    for rep, broke, final, stable in formations_rows:
        form.n += 1
        form.repeated += rep
        form.broke += broke
        form.final += final
        form.final_broke += final and broke
        form.stable += stable
        form.stable_broke += stable and broke
    out = {"offers": acc.offers, "pct_accepted": _pct(acc.accepted, acc.offers)}
    if minutes is not None:
        out["offers_per_minute"] = acc.offers / minutes if minutes > 0 else None
        out["matches_per_minute"] = acc.accepted / minutes if minutes > 0 else None
    out.update(form.report())
    out.update(acc.report(has_sp, has_stable))
    return out


def transcript_summary(market: Market, transcript: Transcript, stable_set: StableSet | None = None) -> TranscriptSummary:
    """Volume and behaviour statistics of one transcript.

    Bilateral events are classified from both members' points of view with
    weight one half each, so they still count as a single offer.
    """
    has_stable = stable_set is not None
    has_sp = has_stable and any(len(p) == 3 for p in stable_set.food_partners + stable_set.color_partners)

    rows = []
    for _, _, _, _, a, fl, mirror in iter_offer_flags(market, transcript, stable_set):
        if mirror is None:
            rows.append(((fl,), a, (1.0,)))
        else:
            rows.append(((fl, mirror), a, (0.5, 0.5)))

    terminal = transcript.terminal_matching
    final_pairs = set(terminal.pairs())
    stable_pairs = stable_set.stable_pairs if has_stable else frozenset()
    breaks = match_breaks(transcript)
    acc_idx = np.flatnonzero(transcript.accepted).tolist()
    foods, colors = transcript.foods.tolist(), transcript.colors.tolist()
    formed: set = set()
    form_rows = []
    for k, i in enumerate(acc_idx):
        p = (foods[i], colors[i])
        form_rows.append((p in formed, breaks[k], p in final_pairs, p in stable_pairs))
        formed.add(p)

    times = _times(transcript)
    last = times[-1] if times else 0.0
    minutes_all = last / 60000.0 if transcript.timed else None
    overall = _block(range(len(rows)), rows, form_rows, minutes_all, has_sp, has_stable)

    terc = terciles(transcript)
    acc_terc = [terc[i] for i in acc_idx]
    blocks = []
    for k in range(3):
        idx = [i for i, t in enumerate(terc) if t == k]
        fr = [row for row, t in zip(form_rows, acc_terc) if t == k]
        mins = minutes_all / 3.0 if minutes_all is not None else None
        blocks.append(_block(idx, rows, fr, mins, has_sp, has_stable))
    for b in blocks:
        b["pct_of_offers"] = _pct(b["offers"], overall["offers"])

    rep_count, rep_distinct = repeated_matchings(transcript)
    final_class = labels = None
    if has_stable:
        mc = classify_matching(stable_set, terminal)
        final_class = mc.label
        labels = {
            "median": mc.coincides_with_median,
            "food_optimal": terminal == stable_set.food_optimal and mc.label != "unstable",
            "color_optimal": terminal == stable_set.color_optimal and mc.label != "unstable",
        }
        labels["non_extremal"] = mc.label != "unstable" and not (labels["food_optimal"] or labels["color_optimal"])
    n_offers = len(transcript)
    n_matches = len(acc_idx)
    return TranscriptSummary(
        offers=n_offers,
        matches=n_matches,
        pct_accepted=_pct(n_matches, n_offers),
        offers_per_minute=overall.get("offers_per_minute"),
        matches_per_minute=overall.get("matches_per_minute"),
        repeated_matching_count=rep_count,
        repeated_matching_distinct=rep_distinct,
        cycles=match_level_cycles(transcript),
        final_stable=is_stable(market, terminal),
        pct_final_pairs_stable=pct_pairs_without_blocking(market, terminal),
        final_class=final_class,
        final_labels=labels,
        terminated_by=transcript.terminated_by,
        overall=overall,
        by_tercile=tuple(blocks),
    )
