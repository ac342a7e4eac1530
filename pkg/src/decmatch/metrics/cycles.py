"""Match-level cycles in the sequence of formed matches."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .. import kernels
from ..dynamics import Transcript


@dataclass(frozen=True)
class CycleReport:
    """``cycle_count`` is an exact integer; it can exceed 64 bits on long runs."""

    cycle_count: int
    avg_length: float | None
    repeated_match_fraction: float | None
    repeated_matching_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        # keep exactness in JSON documents
        d["cycle_count"] = str(self.cycle_count) if self.cycle_count >= 2**53 else self.cycle_count
        return d


def cycle_profile(pairs: Sequence[tuple[int, int]], backend: str | None = None) -> list[tuple[int, int]]:
    """``(length, multiplicity)`` of the longest cycles for each start occurrence."""
    if len(pairs) < 3:
        return []
    foods = [p[0] for p in pairs]
    colors = [p[1] for p in pairs]
    return kernels.cycle_profile(foods, colors, backend=backend)


def count_cycles(pairs: Sequence[tuple[int, int]], backend: str | None = None) -> tuple[int, float | None]:
    prof = cycle_profile(pairs, backend)
    total = sum(k for _, k in prof)
    if not total:
        return 0, None
    weighted = sum(length * k for length, k in prof)
    return total, weighted / total


def match_level_cycles(transcript: Transcript | Sequence[tuple[int, int]], backend: str | None = None) -> CycleReport:
    """Cycles over the accepted events of ``transcript`` (or a bare list of formed pairs)."""
    if isinstance(transcript, Transcript):
        pairs = transcript.accepted_pairs()
    else:
        pairs = [tuple(p) for p in transcript]
    count, avg = count_cycles(pairs, backend)
    seen: set = set()
    repeats = 0
    for p in pairs:
        repeats += p in seen
        seen.add(p)
    rep_fraction = repeats / len(pairs) if pairs else None

    if isinstance(transcript, Transcript):
        rmc = repeated_matchings(transcript)[0]
    else:
        rmc = _state_recurrences(pairs)
    return CycleReport(count, avg, rep_fraction, rmc)


def repeated_matchings(transcript: Transcript) -> tuple[int, int]:
    """``(recurrence events, distinct recurring states)`` over accepted events' post-states."""
    seen: set = set()
    recurring: set = set()
    count = 0
    acc = transcript.accepted.tolist()
    for i, (_, post) in enumerate(transcript.states()):
        if not acc[i]:
            continue
        if post in seen:
            count += 1
            recurring.add(post)
        else:
            seen.add(post)
    return count, len(recurring)


def _state_recurrences(pairs) -> int:
    fp: dict = {}
    cp: dict = {}
    seen = set()
    count = 0
    for f, c in pairs:
        if f in fp:
            cp.pop(fp[f], None)
        if c in cp:
            fp.pop(cp[c], None)
        fp[f], cp[c] = c, f
        key = tuple(sorted(fp.items()))
        if key in seen:
            count += 1
        seen.add(key)
    return count
