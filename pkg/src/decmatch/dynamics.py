"""Randomized decentralized matching dynamics and their transcripts.

Four processes start from the empty matching and run until no agent wants to
move:

* ``TwoRDA``: deferred acceptance where the proposer is drawn from either side
  among active agents.  It can stop at an unstable matching.
* ``DACC``: deferred acceptance with compensation chains.  An agent dropped by
  a partner who had proposed to it proposes next.
* ``RPS``: a random blocking pair is satisfied each step.
* ``RBR``: a random blocked agent matches its most preferred blocking partner.

Every process can draw uniformly, proportionally to the gain, or
proportionally to ``exp(lam * gain)``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import _pykernels, kernels
from .core import COLOR, FOOD, UNMATCHED, Market, Matching, state_digest
from .errors import EmptyCandidateSet, SchemaMismatch
from .rng import SplitMix64

DEFAULT_MAX_STEPS = 1_000_000
NATURAL = "Natural"
STEP_CAP = "StepCap"
COMPENSATION_ORDER = "LIFO"


class Algorithm(str, enum.Enum):
    TwoRDA = "2RDA"
    DACC = "DACC"
    RPS = "RPS"
    RBR = "RBR"

    @property
    def code(self) -> int:
        return _ALGO_CODES[self]

    @classmethod
    def parse(cls, text: "str | Algorithm") -> "Algorithm":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper()
        for a in cls:
            if key in (a.value.upper(), a.name.upper()):
                return a
        raise ValueError(f"unknown algorithm {text!r}; expected one of {[a.value for a in cls]}")


_ALGO_CODES = {
    Algorithm.TwoRDA: _pykernels.TWO_RDA,
    Algorithm.DACC: _pykernels.DACC,
    Algorithm.RPS: _pykernels.RPS,
    Algorithm.RBR: _pykernels.RBR,
}
_RULES = {"uniform": _pykernels.UNIFORM, "proportional": _pykernels.PROPORTIONAL, "exponential": _pykernels.EXPONENTIAL}


@dataclass(frozen=True)
class Selection:
    """How the next proposer, agent or blocking pair is drawn."""

    rule: str = "uniform"
    lam: float | None = None

    def __post_init__(self):
        if self.rule not in _RULES:
            raise ValueError(f"unknown selection rule {self.rule!r}")
        if self.rule == "exponential":
            if self.lam is None or not math.isfinite(self.lam) or self.lam <= 0:
                raise ValueError("exponential selection needs a finite lambda > 0")
        elif self.lam is not None:
            raise ValueError(f"{self.rule} selection takes no lambda")

    @classmethod
    def uniform(cls) -> "Selection":
        return cls("uniform")

    @classmethod
    def proportional(cls) -> "Selection":
        return cls("proportional")

    @classmethod
    def exponential(cls, lam: float) -> "Selection":
        return cls("exponential", float(lam))

    @classmethod
    def parse(cls, text: str, lam: float | None = None) -> "Selection":
        """Accepts ``uniform``, ``proportional``, ``exponential`` (with ``lam``) or ``exponential(0.05)``."""
        t = text.strip().lower()
        if t.startswith("exponential(") and t.endswith(")"):
            return cls.exponential(float(t[len("exponential(") : -1]))
        if t == "exponential":
            if lam is None:
                raise ValueError("exponential selection needs --lambda")
            return cls.exponential(lam)
        return cls(t)

    @property
    def code(self) -> int:
        return _RULES[self.rule]

    def __str__(self) -> str:
        return f"exponential({self.lam!r})" if self.rule == "exponential" else self.rule


@dataclass(frozen=True)
class DynamicsConfig:
    algorithm: Algorithm
    selection: Selection = field(default_factory=Selection.uniform)
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        if not isinstance(self.selection, Selection):
            raise TypeError("selection must be a Selection")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be at least 1")

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm.value,
            "selection": self.selection.rule,
            "lambda": self.selection.lam,
            "seed": int(self.seed),
            "max_steps": int(self.max_steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsConfig":
        sel = Selection(d["selection"], d.get("lambda"))
        return cls(Algorithm.parse(d["algorithm"]), sel, int(d["seed"]), int(d.get("max_steps", DEFAULT_MAX_STEPS)))


@dataclass(frozen=True)
class OfferEvent:
    index: int
    proposer_side: str
    proposer: int
    receiver: int
    accepted: bool
    pre_matching_hash: str
    t_millis: int | None = None
    bilateral: bool = False

    @property
    def food(self) -> int:
        return self.proposer if self.proposer_side == FOOD else self.receiver

    @property
    def color(self) -> int:
        return self.receiver if self.proposer_side == FOOD else self.proposer

    @property
    def pair(self) -> tuple[int, int]:
        return self.food, self.color


def _link(fp: list, cp: list, f: int, c: int) -> None:
    if fp[f] != UNMATCHED:
        cp[fp[f]] = UNMATCHED
    if cp[c] != UNMATCHED:
        fp[cp[c]] = UNMATCHED
    fp[f] = c
    cp[c] = f


class Transcript:
    """Ordered offers of one market run, stored column-wise.

    ``sides`` holds 0 for a food proposer and 1 for a color proposer.  Full
    ``OfferEvent`` objects (with pre-state digests) are built on first access
    to ``events``.
    """

    def __init__(
        self,
        market_id: str,
        n_f: int,
        n_c: int,
        sides,
        proposers,
        receivers,
        accepted,
        terminal_matching: Matching | None = None,
        terminated_by: str = NATURAL,
        config: DynamicsConfig | None = None,
        t_millis=None,
        bilateral=None,
        metadata: dict | None = None,
    ):
        self.market_id = market_id
        self.n_f = int(n_f)
        self.n_c = int(n_c)
        self.sides = np.asarray(sides, dtype=np.int8)
        self.proposers = np.asarray(proposers, dtype=np.int32)
        self.receivers = np.asarray(receivers, dtype=np.int32)
        self.accepted = np.asarray(accepted, dtype=bool)
        self.t_millis = None if t_millis is None else np.asarray(t_millis, dtype=np.int64)
        if bilateral is None:
            bilateral = np.zeros(len(self.sides), dtype=bool)
        self.bilateral = np.asarray(bilateral, dtype=bool)
        self.terminated_by = terminated_by
        self.config = config
        self.metadata = dict(metadata or {})
        self.terminal_matching = terminal_matching if terminal_matching is not None else self.replay()

    def __len__(self) -> int:
        return len(self.sides)

    @property
    def seed(self) -> int | None:
        return None if self.config is None else int(self.config.seed)

    @property
    def timed(self) -> bool:
        return self.t_millis is not None

    @cached_property
    def foods(self) -> np.ndarray:
        return np.where(self.sides == 0, self.proposers, self.receivers)

    @cached_property
    def colors(self) -> np.ndarray:
        return np.where(self.sides == 0, self.receivers, self.proposers)

    def accepted_pairs(self) -> list[tuple[int, int]]:
        idx = np.flatnonzero(self.accepted)
        return list(zip(self.foods[idx].tolist(), self.colors[idx].tolist()))

    def states(self) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
        """Yield ``(pre_state, post_state)`` food-partner tuples for every event."""
        fp = [UNMATCHED] * self.n_f
        cp = [UNMATCHED] * self.n_c
        foods, colors, acc = self.foods.tolist(), self.colors.tolist(), self.accepted.tolist()
        for i in range(len(self)):
            pre = tuple(fp)
            if acc[i]:
                _link(fp, cp, foods[i], colors[i])
            yield pre, tuple(fp)

    def replay(self) -> Matching:
        fp = [UNMATCHED] * self.n_f
        cp = [UNMATCHED] * self.n_c
        for f, c in self.accepted_pairs():
            _link(fp, cp, f, c)
        return Matching(tuple(fp), self.n_c)

    @cached_property
    def events(self) -> tuple[OfferEvent, ...]:
        out = []
        t = None if self.t_millis is None else self.t_millis.tolist()
        sides, props, recs = self.sides.tolist(), self.proposers.tolist(), self.receivers.tolist()
        acc, bil = self.accepted.tolist(), self.bilateral.tolist()
        for i, (pre, _) in enumerate(self.states()):
            out.append(
                OfferEvent(
                    index=i,
                    proposer_side=FOOD if sides[i] == 0 else COLOR,
                    proposer=props[i],
                    receiver=recs[i],
                    accepted=bool(acc[i]),
                    pre_matching_hash=state_digest(pre),
                    t_millis=None if t is None else t[i],
                    bilateral=bool(bil[i]),
                )
            )
        return tuple(out)

    def prefix(self, k: int) -> "Transcript":
        """The first ``k`` events as a transcript of their own."""
        return Transcript(
            self.market_id,
            self.n_f,
            self.n_c,
            self.sides[:k],
            self.proposers[:k],
            self.receivers[:k],
            self.accepted[:k],
            terminated_by=self.terminated_by,
            config=self.config,
            t_millis=None if self.t_millis is None else self.t_millis[:k],
            bilateral=self.bilateral[:k],
            metadata=self.metadata,
        )

    @classmethod
    def from_pairs(cls, market: Market, pairs: Sequence[tuple[int, int]], bilateral: bool = True, t_millis=None) -> "Transcript":
        """Scripted transcript in which each listed pair forms in order."""
        k = len(pairs)
        fs = [p[0] for p in pairs]
        cs = [p[1] for p in pairs]
        return cls(market.market_id, market.n_f, market.n_c, [0] * k, fs, cs, [True] * k,
                   t_millis=t_millis, bilateral=[bilateral] * k)


# ------------------------------------------------------------------ running


def selection_draw(gains: Sequence[float], selection: Selection, rng: SplitMix64) -> int:
    """Index of the chosen candidate given its gain; draws nothing when only one candidate exists."""
    if len(gains) == 0:
        raise EmptyCandidateSet("no candidates to choose from")
    if selection.rule == "proportional" and any(g <= 0 for g in gains):
        raise ValueError("proportional selection needs strictly positive gains")
    return _pykernels.draw_index(rng, list(gains), selection.code, selection.lam or 0.0)


def run(market: Market, config: DynamicsConfig, backend: str | None = None) -> Transcript:
    """Run the dynamics named by ``config.algorithm`` from the empty matching."""
    lam = config.selection.lam or 0.0
    ev, fp, capped = kernels.simulate(
        market, config.algorithm.code, config.selection.code, lam, int(config.seed), int(config.max_steps), backend
    )
    bilateral = np.full(len(ev), config.algorithm is Algorithm.RPS, dtype=bool)
    meta = {"compensation_order": COMPENSATION_ORDER} if config.algorithm is Algorithm.DACC else {}
    return Transcript(
        market.market_id,
        market.n_f,
        market.n_c,
        ev[:, 0],
        ev[:, 1],
        ev[:, 2],
        ev[:, 3].astype(bool),
        terminal_matching=Matching(fp, market.n_c),
        terminated_by=STEP_CAP if capped else NATURAL,
        config=config,
        bilateral=bilateral,
        metadata=meta,
    )


def _run_checked(market: Market, config: DynamicsConfig, expected: Algorithm, backend: str | None) -> Transcript:
    if config.algorithm is not expected:
        raise ValueError(f"config names {config.algorithm.value}, expected {expected.value}")
    return run(market, config, backend)


def run_2rda(market: Market, config: DynamicsConfig, backend: str | None = None) -> Transcript:
    tr = _run_checked(market, config, Algorithm.TwoRDA, backend)
    # every agent's offer-rank only moves forward, so this cannot fail
    assert len(tr) <= market.n_f * market.n_c * 2, "2RDA exceeded its offer bound"
    return tr


def run_dacc(market: Market, config: DynamicsConfig, backend: str | None = None) -> Transcript:
    return _run_checked(market, config, Algorithm.DACC, backend)


def run_rps(market: Market, config: DynamicsConfig, backend: str | None = None) -> Transcript:
    return _run_checked(market, config, Algorithm.RPS, backend)


def run_rbr(market: Market, config: DynamicsConfig, backend: str | None = None) -> Transcript:
    return _run_checked(market, config, Algorithm.RBR, backend)


# ----------------------------------------------------------------- file I/O


def transcript_header(tr: Transcript) -> dict:
    return {
        "record": "header",
        "market_id": tr.market_id,
        "n_f": tr.n_f,
        "n_c": tr.n_c,
        "config": None if tr.config is None else tr.config.to_dict(),
        "seed": tr.seed,
        "terminated_by": tr.terminated_by,
        "terminal_matching": list(tr.terminal_matching.food),
        "metadata": tr.metadata,
    }


def transcript_lines(tr: Transcript) -> Iterator[str]:
    dump = lambda d: json.dumps(d, sort_keys=True, separators=(",", ":"))  # noqa: E731
    yield dump(transcript_header(tr))
    t = None if tr.t_millis is None else tr.t_millis.tolist()
    sides, props, recs = tr.sides.tolist(), tr.proposers.tolist(), tr.receivers.tolist()
    acc, bil = tr.accepted.tolist(), tr.bilateral.tolist()
    for i in range(len(tr)):
        rec = {
            "index": i,
            "proposer_side": FOOD if sides[i] == 0 else COLOR,
            "proposer_idx": props[i],
            "receiver_idx": recs[i],
            "accepted": bool(acc[i]),
        }
        if t is not None:
            rec["t_millis"] = t[i]
        if bil[i]:
            rec["bilateral"] = True
        yield dump(rec)


def write_transcript(tr: Transcript, path) -> None:
    with open(path, "w") as fh:
        for line in transcript_lines(tr):
            fh.write(line + "\n")


def _need(rec: dict, key: str, kind, line: int):
    if key not in rec:
        raise SchemaMismatch(f"missing field {key!r}", line)
    val = rec[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise SchemaMismatch(f"field {key!r} must be an integer, got {val!r}", line)
    if kind is bool and not isinstance(val, bool):
        raise SchemaMismatch(f"field {key!r} must be a boolean, got {val!r}", line)
    return val


def parse_transcript(lines, market: Market | None = None) -> Transcript:
    """Build a transcript from NDJSON lines (header first), validating every field.

    When ``market`` is given the agent indices are checked against its size.
    """
    header = None
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(rec, dict):
            raise SchemaMismatch("record is not an object", lineno)
        if header is None:
            if rec.get("record") != "header":
                raise SchemaMismatch("first record must be the header", lineno)
            header = rec
            if market is not None:
                hdr_n = (header.get("n_f", market.n_f), header.get("n_c", market.n_c))
                if hdr_n != (market.n_f, market.n_c):
                    raise SchemaMismatch(f"header size {hdr_n} disagrees with market", lineno)
            n_f = header.get("n_f", market.n_f if market else None)
            n_c = header.get("n_c", market.n_c if market else None)
            if not isinstance(n_f, int) or not isinstance(n_c, int):
                raise SchemaMismatch("header lacks market size and no market was given", lineno)
            continue
        idx = _need(rec, "index", int, lineno)
        if idx != len(rows):
            raise SchemaMismatch(f"event index {idx} out of sequence (expected {len(rows)})", lineno)
        side = rec.get("proposer_side")
        if side not in (FOOD, COLOR):
            raise SchemaMismatch(f"proposer_side must be {FOOD!r} or {COLOR!r}, got {side!r}", lineno)
        p = _need(rec, "proposer_idx", int, lineno)
        r = _need(rec, "receiver_idx", int, lineno)
        acc = _need(rec, "accepted", bool, lineno)
        n_p, n_r = (n_f, n_c) if side == FOOD else (n_c, n_f)
        if not 0 <= p < n_p or not 0 <= r < n_r:
            raise SchemaMismatch(f"agent index out of range ({side}{p} -> {r})", lineno)
        t = rec.get("t_millis")
        if t is not None and (isinstance(t, bool) or not isinstance(t, int)):
            raise SchemaMismatch("t_millis must be an integer", lineno)
        bil = rec.get("bilateral", False)
        if not isinstance(bil, bool):
            raise SchemaMismatch("bilateral must be a boolean", lineno)
        rows.append((0 if side == FOOD else 1, p, r, acc, t, bil))
    if header is None:
        raise SchemaMismatch("empty transcript file: no header", 1)
    ts = [r[4] for r in rows]
    if any(t is None for t in ts) and any(t is not None for t in ts):
        raise SchemaMismatch("t_millis must be present on all events or none")
    timed = bool(rows) and ts[0] is not None
    if timed and any(b < a for a, b in zip(ts, ts[1:])):
        raise SchemaMismatch("t_millis must be non-decreasing")
    config = None
    if header.get("config"):
        try:
            config = DynamicsConfig.from_dict(header["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"bad config in header: {exc}", 1) from exc
    market_id = header.get("market_id") or (market.market_id if market else "")
    if market is not None and header.get("market_id") not in (None, market.market_id):
        raise SchemaMismatch(f"transcript refers to market {header['market_id']}, not {market.market_id}", 1)
    tr = Transcript(
        market_id,
        n_f,
        n_c,
        [r[0] for r in rows],
        [r[1] for r in rows],
        [r[2] for r in rows],
        [r[3] for r in rows],
        terminated_by=header.get("terminated_by", NATURAL),
        config=config,
        t_millis=ts if timed else None,
        bilateral=[r[5] for r in rows],
        metadata=header.get("metadata") or {},
    )
    stated = header.get("terminal_matching")
    if stated is not None and list(stated) != list(tr.terminal_matching.food):
        raise SchemaMismatch("header terminal_matching disagrees with the replayed events", 1)
    return tr


def read_transcript(path, market: Market | None = None) -> Transcript:
    with open(Path(path)) as fh:
        return parse_transcript(fh, market)
