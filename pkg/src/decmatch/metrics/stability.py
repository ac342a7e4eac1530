"""Distance-to-stability measures for a single matching."""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ..core import UNMATCHED, Market, Matching
from ..errors import DegenerateNormalizer


@dataclass(frozen=True)
class StabilitySnapshot:
    """How far one matching is from stability.

    Loss measures average, over all agents of both sides, the gain an agent
    would get from its best blocking partner (0 for agents with none).  The
    relative variants are ``None`` when a divisor is zero.
    """

    n_blocking_pairs: int
    n_agents_blocked: int
    max_disjoint_blocking_pairs: int
    avg_loss_abs: float
    avg_loss_rel_final: float | None
    avg_loss_rel_market_mean: float | None
    avg_loss_rel_random: float | None
    pct_unmatched: float

    def to_dict(self) -> dict:
        return asdict(self)


def max_disjoint(pairs: Iterable[tuple[int, int]]) -> int:
    """Size of a maximum matching in the bipartite graph whose edges are ``pairs`` (Hopcroft-Karp)."""
    adj: dict[int, list[int]] = {}
    for f, c in pairs:
        adj.setdefault(f, []).append(c)
    if not adj:
        return 0
    left = list(adj)
    match_l = {f: None for f in left}
    match_r: dict[int, int] = {}
    inf = float("inf")

    def bfs() -> bool:
        dist.clear()
        q = deque()
        for f in left:
            if match_l[f] is None:
                dist[f] = 0
                q.append(f)
        found = False
        while q:
            f = q.popleft()
            for c in adj[f]:
                g = match_r.get(c)
                if g is None:
                    found = True
                elif g not in dist:
                    dist[g] = dist[f] + 1
                    q.append(g)
        return found

    def dfs(f) -> bool:
        for c in adj[f]:
            g = match_r.get(c)
            if g is None or (dist.get(g, inf) == dist[f] + 1 and dfs(g)):
                match_l[f] = c
                match_r[c] = f
                return True
        dist[f] = inf
        return False

    dist: dict[int, float] = {}
    size = 0
    while bfs():
        for f in left:
            if match_l[f] is None and dfs(f):
                size += 1
    return size


def _ratio(num: Sequence[float], den: Sequence[float]) -> float:
    if any(d == 0 for d in den):
        raise DegenerateNormalizer("a loss normalizer is zero")
    return float(np.mean([a / b for a, b in zip(num, den)]))


def _blocking_from_state(pf: np.ndarray, pc: np.ndarray, food: Sequence[int], color: Sequence[int]):
    n_f, n_c = pf.shape
    uf = np.array([pf[f, c] if c != UNMATCHED else 0 for f, c in enumerate(food)], dtype=np.int64)
    uc = np.array([pc[f, c] if f != UNMATCHED else 0 for c, f in enumerate(color)], dtype=np.int64)
    gain_f = pf - uf[:, None]
    gain_c = pc - uc[None, :]
    mask = (gain_f > 0) & (gain_c > 0)
    return mask, gain_f, gain_c, uf, uc


def stability_snapshot(market: Market, matching: Matching | Sequence[int]) -> StabilitySnapshot:
    if not isinstance(matching, Matching):
        matching = Matching(tuple(matching), market.n_c)
    pf, pc = market.payoff_f, market.payoff_c
    mask, gain_f, gain_c, uf, uc = _blocking_from_state(pf, pc, matching.food, matching.color)
    fs, cs = np.nonzero(mask)
    pairs = list(zip(fs.tolist(), cs.tolist()))

    loss_f = np.where(mask, gain_f, 0).max(axis=1)
    loss_c = np.where(mask, gain_c, 0).max(axis=0)
    losses = np.concatenate([loss_f, loss_c]).astype(float)
    own = np.concatenate([uf, uc]).astype(float)
    # expectation under a uniformly random complete matching
    rand = np.concatenate([pf.mean(axis=1), pc.mean(axis=0)])
    market_mean = (pf.sum() + pc.sum()) / (pf.size + pc.size)

    rel = {}
    for key, den in (("final", own), ("random", rand)):
        try:
            rel[key] = _ratio(losses, den)
        except DegenerateNormalizer:
            rel[key] = None
    n_agents = market.n_f + market.n_c
    blocked = int((loss_f > 0).sum() + (loss_c > 0).sum())
    return StabilitySnapshot(
        n_blocking_pairs=len(pairs),
        n_agents_blocked=blocked,
        max_disjoint_blocking_pairs=max_disjoint(pairs),
        avg_loss_abs=float(losses.mean()),
        avg_loss_rel_final=rel["final"],
        avg_loss_rel_market_mean=float(losses.mean() / market_mean),
        avg_loss_rel_random=rel["random"],
        pct_unmatched=100.0 * (n_agents - 2 * matching.n_pairs) / n_agents,
    )


def relative_loss(market: Market, matching: Matching, normalizer: str = "final") -> float:
    """Average relative loss; raises ``DegenerateNormalizer`` instead of returning ``None``."""
    snap = stability_snapshot(market, matching)
    value = {
        "final": snap.avg_loss_rel_final,
        "market_mean": snap.avg_loss_rel_market_mean,
        "random": snap.avg_loss_rel_random,
    }[normalizer]
    if value is None:
        raise DegenerateNormalizer(f"normalizer {normalizer!r} is zero for some agent")
    return value


def pct_pairs_without_blocking(market: Market, matching: Matching) -> float | None:
    """Share of matched pairs in which neither member has a blocking partner."""
    pairs = matching.pairs()
    if not pairs:
        return None
    mask, *_ = _blocking_from_state(market.payoff_f, market.payoff_c, matching.food, matching.color)
    f_blocked = mask.any(axis=1)
    c_blocked = mask.any(axis=0)
    clean = sum(1 for f, c in pairs if not f_blocked[f] and not c_blocked[c])
    return 100.0 * clean / len(pairs)
