"""Deterministic engine for two-sided one-to-one matching markets."""
from .core import (
    COLOR,
    FOOD,
    UNMATCHED,
    Market,
    Matching,
    StableSet,
    blocking_pairs,
    classify_matching,
    deferred_acceptance,
    enumerate_stable_matchings,
    is_stable,
    load_market,
    median_stable_matching,
    save_market,
)
from .dynamics import Algorithm, DynamicsConfig, Selection, Transcript, read_transcript, run, write_transcript
from .kernels import BACKEND
from .markets import MarketSpec, generate, validate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "COLOR",
    "FOOD",
    "UNMATCHED",
    "Algorithm",
    "DynamicsConfig",
    "Market",
    "MarketSpec",
    "Matching",
    "Selection",
    "StableSet",
    "Transcript",
    "blocking_pairs",
    "classify_matching",
    "deferred_acceptance",
    "enumerate_stable_matchings",
    "generate",
    "is_stable",
    "load_market",
    "median_stable_matching",
    "read_transcript",
    "run",
    "save_market",
    "validate",
    "write_transcript",
]
