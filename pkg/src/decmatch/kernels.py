"""Backend selection for the simulation and cycle-counting kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``DECMATCH_PURE_PYTHON=1`` is set, the pure-Python ``_pykernels`` module
runs instead.  Both produce identical output for identical input.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - exercised only on installs without a compiler
    _compiled = None

if _compiled is not None and os.environ.get("DECMATCH_PURE_PYTHON") != "1":
    _default = _compiled
else:
    _default = _pykernels

BACKEND: str = _default.BACKEND
HAVE_COMPILED = _compiled is not None


def _module(backend: str | None):
    if backend is None:
        return _default
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")


def simulate(market, algo: int, rule: int, lam: float, seed: int, max_steps: int, backend: str | None = None):
    """Run one dynamics on ``market``; returns ``(events[T, 4] int32, food partners, capped)``."""
    mod = _module(backend)
    prefs = market.preferences
    arrays = (market.payoff_f, market.payoff_c, prefs.food_lists, prefs.color_lists, prefs.food_rank, prefs.color_rank)
    if mod is _pykernels:
        events, fp, capped = mod.simulate(algo, rule, lam, seed, max_steps, *(a.tolist() for a in arrays))
        ev = np.array(events, dtype=np.int32).reshape(len(events), 4)
    else:
        ev, fp, capped = mod.simulate(algo, rule, lam, seed, max_steps, *arrays)
    return ev, tuple(int(c) for c in fp), bool(capped)


def cycle_profile(foods, colors, backend: str | None = None) -> list[tuple[int, int]]:
    """``(length, count)`` of the longest match-level cycles for each start occurrence."""
    mod = _module(backend)
    if mod is _pykernels:
        return _pykernels.cycle_profile([int(x) for x in foods], [int(x) for x in colors])
    out = mod.cycle_profile(np.ascontiguousarray(foods, dtype=np.int64), np.ascontiguousarray(colors, dtype=np.int64))
    if out is None:
        # 64-bit counts overflowed; redo with exact integers
        return _pykernels.cycle_profile([int(x) for x in foods], [int(x) for x in colors])
    return out
