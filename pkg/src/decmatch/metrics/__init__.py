"""Outcome, trajectory and offer-level measures."""
from .cycles import CycleReport, count_cycles, cycle_profile, match_level_cycles, repeated_matchings
from .offers import (
    OfferFlags,
    OfferTracker,
    TranscriptSummary,
    classify_offer,
    iter_offer_flags,
    match_breaks,
    offer_table,
    terciles,
    transcript_summary,
)
from .stability import (
    StabilitySnapshot,
    max_disjoint,
    pct_pairs_without_blocking,
    relative_loss,
    stability_snapshot,
)
from .trajectory import TrajectoryPoint, aggregate_trajectories, trajectory

__all__ = [
    "CycleReport",
    "OfferFlags",
    "OfferTracker",
    "StabilitySnapshot",
    "TrajectoryPoint",
    "TranscriptSummary",
    "aggregate_trajectories",
    "classify_offer",
    "count_cycles",
    "cycle_profile",
    "iter_offer_flags",
    "match_breaks",
    "match_level_cycles",
    "max_disjoint",
    "offer_table",
    "pct_pairs_without_blocking",
    "relative_loss",
    "repeated_matchings",
    "stability_snapshot",
    "terciles",
    "trajectory",
    "transcript_summary",
]
