"""Command-line entry point: ``decmatch {gen,enumerate,run-batch,analyze,validate}``.

Exit status is 0 on success, 2 when a validation fails and 1 on any error.
Data goes to stdout or ``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import (
    classify_matching,
    dumps_canonical,
    enumerate_stable_matchings,
    load_market,
    market_to_dict,
    median_stable_matching,
    save_market,
)
from .dynamics import Algorithm, Selection
from .errors import DecmatchError
from .markets import CLASSES, MarketSpec, generate, spec_of, validate
from .runner import BatchConfig, analyze, run_batch, table_csv, write_reports

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("decmatch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are errors, not validation failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _spec_from_args(args) -> MarketSpec:
    if args.spec:
        return MarketSpec.from_dict(json.loads(Path(args.spec).read_text()))
    kw = {"seed": args.seed}
    if args.n is not None:
        kw["n"] = args.n
    if args.target_corr is not None:
        kw["target_corr"] = args.target_corr
    if args.marginals:
        kw["marginals"] = tuple(args.marginals)
    if args.color_shift:
        kw["color_shift"] = args.color_shift
    if args.dispersion:
        kw["dispersion"] = args.dispersion
    return MarketSpec.of(args.market_class, **kw)


def cmd_gen(args) -> int:
    market = generate(_spec_from_args(args))
    if args.out:
        save_market(market, args.out)
    else:
        sys.stdout.write(dumps_canonical(market_to_dict(market)))
    log.info("generated %s (%d attempts)", market.market_id, market.spec.get("attempts", 0))
    return EXIT_OK


def cmd_enumerate(args) -> int:
    market = load_market(args.market)
    ss = enumerate_stable_matchings(market)
    medians = set(median_stable_matching(ss, market))
    listing = []
    for m in ss.matchings:
        labels = []
        if m == ss.food_optimal:
            labels.append("food_optimal")
        if m == ss.color_optimal:
            labels.append("color_optimal")
        if m in medians:
            labels.append("median")
        listing.append({"food_partners": list(m.food), "labels": labels, "class": classify_matching(ss, m).label})
    doc = {
        "market_id": market.market_id,
        "n_stable": len(ss),
        "matchings": listing,
        "food_stable_partners": [list(p) for p in ss.food_partners],
        "color_stable_partners": [list(p) for p in ss.color_partners],
    }
    _emit(dumps_canonical(doc), args.out)
    return EXIT_OK


def _batch_config(args) -> BatchConfig:
    if args.config:
        cfg = BatchConfig.load(args.config)
        d = cfg.to_dict()
        base = cfg.base_dir
    else:
        if not args.market:
            raise ValueError("run-batch needs a config file or --market")
        d = {"markets": [str(Path(m).resolve()) for m in args.market], "algorithms": []}
        base = "."
    if args.algo:
        sel = args.selection or "uniform"
        selection = Selection.parse(sel, args.lam)
        d["algorithms"] = [
            {"algorithm": Algorithm.parse(a).value, "selection": selection.rule, "lambda": selection.lam} for a in args.algo
        ]
    if args.runs is not None:
        d["runs_per_cell"] = args.runs
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.out:
        d["out"] = str(Path(args.out).resolve())
    if args.transcripts:
        d["transcripts_dir"] = str(Path(args.transcripts).resolve())
    if args.jobs is not None:
        d["jobs"] = args.jobs
    if not d["algorithms"]:
        raise ValueError("no algorithms given (use --algo or the config file)")
    return BatchConfig.from_dict(d, base_dir=base)


def cmd_run_batch(args) -> int:
    cfg = _batch_config(args)
    rows = run_batch(cfg, progress=True)
    if not cfg.out:
        sys.stdout.write(table_csv(rows))
    return EXIT_OK


def cmd_analyze(args) -> int:
    market = load_market(args.market)
    reports = analyze(args.transcripts, market, grid=args.grid)
    if args.out:
        for p in write_reports(reports, args.out):
            log.info("wrote %s", p)
    else:
        docs = [{k: r[k] for k in ("source", "market_id", "summary")} for r in reports]
        sys.stdout.write(dumps_canonical(docs))
    return EXIT_OK


def cmd_validate(args) -> int:
    market = load_market(args.market)
    if args.spec or args.market_class:
        spec = _spec_from_args(args)
    else:
        spec = spec_of(market)
        if spec is None:
            raise ValueError("market file records no spec; pass --spec or --class")
    report = validate(spec, market)
    _emit(dumps_canonical(report.to_dict()), args.out)
    return EXIT_OK if report.passed else EXIT_INVALID


def _add_spec_args(p) -> None:
    p.add_argument("--class", dest="market_class", choices=CLASSES, required=False)
    p.add_argument("--spec", help="market spec JSON file (overrides --class and friends)")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-corr", type=float)
    p.add_argument("--marginals", type=int, nargs=2, metavar=("M_F", "M_C"))
    p.add_argument("--color-shift", type=int, default=0)
    p.add_argument("--dispersion", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="decmatch", description="Decentralized matching market engine")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a market from a spec")
    _add_spec_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("enumerate", help="list all stable matchings of a market")
    p.add_argument("market")
    p.add_argument("--out")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("run-batch", help="simulate dynamics and aggregate metrics")
    p.add_argument("config", nargs="?")
    p.add_argument("--market", action="append")
    p.add_argument("--algo", action="append")
    p.add_argument("--selection")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--transcripts", help="directory for per-run transcripts")
    p.set_defaults(func=cmd_run_batch)

    p = sub.add_parser("analyze", help="reports for recorded transcripts")
    p.add_argument("transcripts", nargs="+")
    p.add_argument("--market", required=True)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check a market against its class contract")
    p.add_argument("market")
    _add_spec_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    if getattr(args, "command", None) == "gen" and not args.spec and not args.market_class:
        print("decmatch gen: give --class or --spec", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (DecmatchError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"decmatch: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
