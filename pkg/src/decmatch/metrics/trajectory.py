"""Distance-to-stability and match-status shares along a run, on a normalized time grid."""
from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Sequence

from ..core import UNMATCHED, Market, StableSet, enumerate_stable_matchings, median_stable_matching
from ..dynamics import Transcript
from .stability import stability_snapshot


@dataclass(frozen=True)
class TrajectoryPoint:
    """State at normalized time ``t`` (0 = start, 100 = final matching reached).

    Shares are fractions of all agents on both sides; ``stable_*`` and
    ``unstable_*`` refer to whether the current partner is a stable partner,
    ``*_final``/``*_transient`` to whether the pair is in the terminal matching.
    """

    t: float
    event_index: int
    n_blocking_pairs: int
    n_agents_blocked: int
    max_disjoint_blocking_pairs: int
    avg_loss_abs: float
    stable_final: float
    stable_transient: float
    unstable_final: float
    unstable_transient: float
    unmatched: float
    median: float
    non_median_stable: float

    @property
    def unstable(self) -> float:
        return self.unstable_final + self.unstable_transient

    def to_dict(self) -> dict:
        return asdict(self)


MEASURES = (
    "n_blocking_pairs",
    "n_agents_blocked",
    "max_disjoint_blocking_pairs",
    "avg_loss_abs",
    "stable_final",
    "stable_transient",
    "unstable_final",
    "unstable_transient",
    "unmatched",
    "median",
    "non_median_stable",
)


def _shares(food: Sequence[int], final: Sequence[int], stable_pairs, median_pairs, n_agents: int) -> dict:
    counts = dict.fromkeys(("stable_final", "stable_transient", "unstable_final", "unstable_transient", "median", "non_median_stable"), 0)
    matched = 0
    for f, c in enumerate(food):
        if c == UNMATCHED:
            continue
        matched += 2
        stable = (f, c) in stable_pairs
        key = ("stable_" if stable else "unstable_") + ("final" if final[f] == c else "transient")
        counts[key] += 2
        if (f, c) in median_pairs:
            counts["median"] += 2
        elif stable:
            counts["non_median_stable"] += 2
    out = {k: v / n_agents for k, v in counts.items()}
    out["unmatched"] = (n_agents - matched) / n_agents
    return out


def trajectory(
    market: Market, transcript: Transcript, grid: int = 101, stable_set: StableSet | None = None
) -> list[TrajectoryPoint]:
    """Sample the market state at ``grid`` equally spaced normalized times.

    Time is wall-clock when the transcript is timed and the event count
    otherwise; the end of the axis is the event that formed the last match.
    Each point takes the post-state of the last event at or before it.
    """
    if grid < 2:
        raise ValueError("grid needs at least two points")
    if stable_set is None:
        stable_set = enumerate_stable_matchings(market)
    median_pairs = set(median_stable_matching(stable_set, market)[0].pairs())
    stable_pairs = stable_set.stable_pairs
    final = transcript.terminal_matching.food
    n_agents = market.n_f + market.n_c

    posts = [()]
    posts[0] = tuple([UNMATCHED] * market.n_f)
    for _, post in transcript.states():
        posts.append(post)
    # times[k] is when state posts[k] begins; posts[0] holds from 0
    if transcript.timed:
        times = [0.0] + [float(t) for t in transcript.t_millis.tolist()]
    else:
        times = [float(k) for k in range(len(posts))]
    acc = transcript.accepted.tolist()
    last_acc = max((i for i, a in enumerate(acc) if a), default=None)
    if last_acc is None:
        end = 0.0
    else:
        end = times[last_acc + 1]

    cache: dict = {}
    out = []
    k = 0
    n_points = 1 if len(transcript) == 0 else grid
    for g in range(n_points):
        frac = g / (grid - 1)
        tau = frac * end
        while k + 1 < len(posts) and times[k + 1] <= tau:
            k += 1
        state = posts[k]
        if state not in cache:
            snap = stability_snapshot(market, state)
            cache[state] = (snap, _shares(state, final, stable_pairs, median_pairs, n_agents))
        snap, shares = cache[state]
        out.append(
            TrajectoryPoint(
                t=100.0 * frac,
                event_index=k - 1,
                n_blocking_pairs=snap.n_blocking_pairs,
                n_agents_blocked=snap.n_agents_blocked,
                max_disjoint_blocking_pairs=snap.max_disjoint_blocking_pairs,
                avg_loss_abs=snap.avg_loss_abs,
                **shares,
            )
        )
    return out


def aggregate_trajectories(series: Sequence[Sequence[TrajectoryPoint]]) -> list[dict]:
    """Mean with both population and sample standard deviation at every grid point."""
    series = [s for s in series if s]
    if not series:
        return []
    length = min(len(s) for s in series)
    rows = []
    for g in range(length):
        row = {"t": series[0][g].t, "n": len(series)}
        for m in MEASURES:
            vals = [float(getattr(s[g], m)) for s in series]
            row[f"{m}_mean"] = statistics.fmean(vals)
            row[f"{m}_sd_pop"] = statistics.pstdev(vals)
            row[f"{m}_sd_sample"] = statistics.stdev(vals) if len(vals) > 1 else None
        rows.append(row)
    return rows
