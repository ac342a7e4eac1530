"""Compare the compiled and pure-Python kernels on generated markets.

Usage: python benchmarks/bench_kernels.py [--runs 2000] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
import time

from decmatch import kernels
from decmatch.dynamics import Algorithm, DynamicsConfig, Selection, run
from decmatch.markets import MarketSpec, generate
from decmatch.metrics import match_level_cycles
from decmatch.rng import derive_seed


def _time_runs(market, algo: Algorithm, runs: int, backend: str) -> tuple[float, int]:
    offers = 0
    t0 = time.perf_counter()
    for r in range(runs):
        cfg = DynamicsConfig(algo, Selection.uniform(), derive_seed("bench", algo.value, r))
        offers += len(run(market, cfg, backend=backend))
    return time.perf_counter() - t0, offers


def _time_cycles(transcripts, backend: str) -> float:
    t0 = time.perf_counter()
    for tr in transcripts:
        match_level_cycles(tr, backend=backend)
    return time.perf_counter() - t0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if not kernels.HAVE_COMPILED:
        print("compiled kernels unavailable; build with `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    markets = {
        "GenericUnique": generate(MarketSpec.of("GenericUnique", target_corr=0.9, seed=1)),
        "FiveSM_ThreeSP": generate(MarketSpec.of("FiveSM_ThreeSP", seed=1)),
    }
    results = []
    print(f"{'market':<16}{'algo':<6}{'runs':>6}{'python s':>11}{'cython s':>11}{'speedup':>9}")
    for name, market in markets.items():
        for algo in Algorithm:
            n_py = max(1, args.runs // 10)
            t_py, _ = _time_runs(market, algo, n_py, "python")
            t_cy, _ = _time_runs(market, algo, args.runs, "cython")
            per_py, per_cy = t_py / n_py, t_cy / args.runs
            results.append({"market": name, "algorithm": algo.value, "python_per_run": per_py, "cython_per_run": per_cy})
            print(f"{name:<16}{algo.value:<6}{args.runs:>6}{per_py * args.runs:>11.3f}{t_cy:>11.3f}{per_py / per_cy:>8.1f}x")

    fsm = markets["FiveSM_ThreeSP"]
    trs = [run(fsm, DynamicsConfig(Algorithm.RPS, seed=derive_seed("bench-cyc", r))) for r in range(200)]
    t_py, t_cy = _time_cycles(trs, "python"), _time_cycles(trs, "cython")
    results.append({"market": "FiveSM_ThreeSP", "algorithm": "cycle_dp", "python_per_run": t_py / 200, "cython_per_run": t_cy / 200})
    print(f"{'FiveSM_ThreeSP':<16}{'cycDP':<6}{200:>6}{t_py:>11.3f}{t_cy:>11.3f}{t_py / t_cy:>8.1f}x")
    print("(python column extrapolated from a tenth of the runs)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": platform.python_version(), "results": results}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
