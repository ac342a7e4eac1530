"""Batch Monte-Carlo runs and report generation for recorded transcripts."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .core import Market, dumps_canonical, enumerate_stable_matchings, load_market, market_from_dict, market_to_dict
from .dynamics import Algorithm, DynamicsConfig, Selection, Transcript, read_transcript, run, write_transcript
from .markets import MarketSpec, generate, spec_of, validate
from .errors import InvalidMarket
from .metrics import offer_table, trajectory, transcript_summary
from .rng import derive_seed

log = logging.getLogger("decmatch.runner")

ABSENT = "NA"

# column order of the aggregate table
AGGREGATE_COLUMNS = (
    "offers",
    "matches",
    "pct_accepted",
    "pct_to_blocking_pair",
    "pct_accepted_given_to_blocking_pair",
    "pct_only_proposer_beneficial",
    "pct_repeated_offers",
    "pct_to_previous_match",
    "pct_matches_repeated",
    "pct_matches_break",
    "repeated_matchings",
    "repeated_matchings_distinct",
    "cycle_count",
    "avg_cycle_length",
    "pct_to_stable_pair",
    "pct_accepted_given_to_stable_pair",
    "pct_proposer_active",
    "pct_downward",
    "pct_gale_shapley",
    "pct_skips_someone",
    "pct_final_matching_stable",
    "pct_final_pairs_stable",
    "pct_median_given_stable",
    "pct_non_extremal_given_stable",
    "pct_food_optimal_given_stable",
    "pct_color_optimal_given_stable",
    "pct_to_best_stable_partner",
    "pct_accepted_given_best_stable_partner",
    "pct_to_median_stable_partner",
    "pct_accepted_given_median_stable_partner",
    "pct_to_worst_stable_partner",
    "pct_accepted_given_worst_stable_partner",
)
KEY_COLUMNS = ("market_id", "market_class", "algorithm", "selection", "lambda", "runs", "step_cap_rate")


@dataclass(frozen=True)
class AlgorithmTemplate:
    algorithm: Algorithm
    selection: Selection = field(default_factory=Selection.uniform)
    max_steps: int = 1_000_000

    @classmethod
    def from_dict(cls, d: dict) -> "AlgorithmTemplate":
        sel = d.get("selection", "uniform")
        lam = d.get("lambda")
        selection = Selection.parse(sel, lam) if isinstance(sel, str) else Selection(**sel)
        return cls(Algorithm.parse(d["algorithm"]), selection, int(d.get("max_steps", 1_000_000)))

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm.value,
            "selection": self.selection.rule,
            "lambda": self.selection.lam,
            "max_steps": self.max_steps,
        }

    def config(self, seed: int) -> DynamicsConfig:
        return DynamicsConfig(self.algorithm, self.selection, seed, self.max_steps)


@dataclass(frozen=True)
class BatchConfig:
    """``markets`` entries are file paths, ``{"path": ...}`` or ``{"spec": {...}}`` documents."""

    markets: tuple
    algorithms: tuple[AlgorithmTemplate, ...]
    runs_per_cell: int = 10_000
    master_seed: int = 0
    out: str | None = None
    transcripts_dir: str | None = None
    jobs: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be at least 1")
        if not self.markets or not self.algorithms:
            raise ValueError("a batch needs at least one market and one algorithm")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "BatchConfig":
        algos = tuple(AlgorithmTemplate.from_dict(a) for a in d["algorithms"])
        return cls(
            markets=tuple(d["markets"]),
            algorithms=algos,
            runs_per_cell=int(d.get("runs_per_cell", 10_000)),
            master_seed=int(d.get("master_seed", 0)),
            out=d.get("out"),
            transcripts_dir=d.get("transcripts_dir"),
            jobs=int(d.get("jobs", 1)),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path) -> "BatchConfig":
        p = Path(path)
        return cls.from_dict(json.loads(p.read_text()), base_dir=str(p.parent))

    def to_dict(self) -> dict:
        return {
            "markets": list(self.markets),
            "algorithms": [a.to_dict() for a in self.algorithms],
            "runs_per_cell": self.runs_per_cell,
            "master_seed": self.master_seed,
            "out": self.out,
            "transcripts_dir": self.transcripts_dir,
            "jobs": self.jobs,
        }


def resolve_market(entry, base_dir: str = ".") -> Market:
    """Load or generate one market entry and check it against its recorded spec."""
    if isinstance(entry, str):
        entry = {"path": entry}
    if "path" in entry:
        path = Path(entry["path"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        market = load_market(path)
    elif "spec" in entry:
        market = generate(MarketSpec.from_dict(entry["spec"]))
    else:
        raise InvalidMarket(f"market entry needs 'path' or 'spec': {entry!r}")
    spec = spec_of(market)
    if spec is not None and not validate(spec, market).passed:
        raise InvalidMarket(f"market {market.market_id} fails validation: {validate(spec, market).failures()}")
    return market


def run_seed(master_seed: int, market_id: str, template: AlgorithmTemplate, run_index: int) -> int:
    """Per-run seed; external tools can reproduce any single run from these parts."""
    return derive_seed(master_seed, market_id, template.algorithm.value, str(template.selection), run_index)


def _run_chunk(args) -> list[dict]:
    market_doc, template_doc, master_seed, start, stop, tdir = args
    market = market_from_dict(market_doc)
    template = AlgorithmTemplate.from_dict(template_doc)
    stable_set = enumerate_stable_matchings(market)
    rows = []
    for r in range(start, stop):
        seed = run_seed(master_seed, market.market_id, template, r)
        tr = run(market, template.config(seed))
        if tdir:
            tag = f"{market.market_id}_{template.algorithm.value}_{template.selection}_{r:06d}.ndjson"
            write_transcript(tr, Path(tdir) / tag)
        rows.append(transcript_summary(market, tr, stable_set).flat())
    return rows


def _mean(values: Sequence) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if all(isinstance(v, int) for v in vals):
        return float(Fraction(sum(vals), len(vals)))
    # fsum is exact and order-independent
    return math.fsum(float(v) for v in vals) / len(vals)


def _aggregate(market: Market, template: AlgorithmTemplate, runs: list[dict]) -> dict:
    row = {
        "market_id": market.market_id,
        "market_class": (market.spec or {}).get("kind"),
        "algorithm": template.algorithm.value,
        "selection": template.selection.rule,
        "lambda": template.selection.lam,
        "runs": len(runs),
        "step_cap_rate": _mean([r["step_capped"] for r in runs]),
    }
    for col in AGGREGATE_COLUMNS:
        row[col] = _mean([r.get(col) for r in runs])
    return row


def run_batch(config: BatchConfig, progress: bool = False) -> list[dict]:
    """One aggregate row per (market, algorithm template); deterministic in ``master_seed``."""
    markets = [resolve_market(m, config.base_dir) for m in config.markets]
    if config.transcripts_dir:
        Path(config.transcripts_dir).mkdir(parents=True, exist_ok=True)
    tasks = []
    chunk = max(1, math.ceil(config.runs_per_cell / max(1, config.jobs * 4)))
    for mi, market in enumerate(markets):
        doc = market_to_dict(market)
        for ai, tmpl in enumerate(config.algorithms):
            for start in range(0, config.runs_per_cell, chunk):
                stop = min(config.runs_per_cell, start + chunk)
                tasks.append(((mi, ai, start), (doc, tmpl.to_dict(), config.master_seed, start, stop, config.transcripts_dir)))
    results: dict = {}
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for (key, _), rows in zip(tasks, pool.map(_run_chunk, [t[1] for t in tasks])):
                results[key] = rows
    else:
        for key, args in tasks:
            results[key] = _run_chunk(args)
            if progress:
                log.info("market %d algorithm %d runs from %d done", *key)
    table = []
    for mi, market in enumerate(markets):
        for ai, tmpl in enumerate(config.algorithms):
            runs = []
            for key in sorted(k for k in results if k[:2] == (mi, ai)):
                runs.extend(results[key])
            table.append(_aggregate(market, tmpl, runs))
    if config.out:
        out = Path(config.out)
        if not out.is_absolute():
            out = Path(config.base_dir) / out
        write_table(table, out)
    return table


def _fmt(v) -> str:
    if v is None:
        return ABSENT
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.10g}"
    return str(v)


def table_csv(rows: list[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (KEY_COLUMNS + AGGREGATE_COLUMNS))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_table(rows: list[dict], path, columns: Sequence[str] | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(table_csv(rows, columns))


# ------------------------------------------------------------------ analyze


def analyze(transcripts: Sequence, market: Market, grid: int = 101) -> list[dict]:
    """Summary, offer-level flags and a trajectory for each transcript (paths or objects)."""
    stable_set = enumerate_stable_matchings(market)
    reports = []
    for item in transcripts:
        tr = item if isinstance(item, Transcript) else read_transcript(item, market)
        summary = transcript_summary(market, tr, stable_set)
        reports.append({
            "source": None if isinstance(item, Transcript) else str(item),
            "market_id": tr.market_id,
            "summary": summary.to_dict(),
            "offers": offer_table(market, tr, stable_set),
            "trajectory": [p.to_dict() for p in trajectory(market, tr, grid, stable_set)],
        })
    return reports


def write_reports(reports: list[dict], out_dir) -> list[Path]:
    """One JSON document plus offer and trajectory CSV files per report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, rep in enumerate(reports):
        stem = Path(rep["source"]).stem if rep["source"] else f"transcript_{k:04d}"
        doc = {key: rep[key] for key in ("source", "market_id", "summary")}
        p = out / f"{stem}.report.json"
        p.write_text(dumps_canonical(doc) + "\n")
        written.append(p)
        for name in ("offers", "trajectory"):
            rows = rep[name]
            if rows:
                q = out / f"{stem}.{name}.csv"
                write_table(rows, q, list(rows[0].keys()))
                written.append(q)
    return written


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))
