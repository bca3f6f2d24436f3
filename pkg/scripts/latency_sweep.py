#!/usr/bin/env python3
"""Sweep re-ranking latency across fingerprint widths and kept layers.

Each cell builds a synthetic store at the requested shape, scores the full
candidate list repeatedly on one thread, and reports the compute-phase mean
alongside the cost model's operation count, so measured time can be read
against predicted work.

Usage:
  python3 scripts/latency_sweep.py --bits 64 256 1024 --layers 5 13 --csv sweep.csv
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from becr.bench import BenchConfig, run_bench, write_bench_csv


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=150)
    parser.add_argument("--doc-len", type=int, default=857)
    parser.add_argument("--terms", type=int, default=5)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--bits", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--layers", type=int, nargs="+", default=[5, 13])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", type=Path, default=None)
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    reports = []
    print(f"{'layers':>6} {'bits':>6} {'compute ms':>11} {'p95 ms':>8} "
          f"{'total ms':>9} {'model ops':>12}")
    for n_layers in args.layers:
        for bits in args.bits:
            config = BenchConfig(
                mode="lsh",
                n_docs=args.docs,
                doc_len=args.doc_len,
                q_len=args.terms,
                n_layers=n_layers,
                bits=bits,
                dim=args.dim,
                seed=args.seed,
                threads=1,
                repeats=args.repeats,
            )
            with tempfile.TemporaryDirectory() as tmp:
                report = run_bench(config, tmp)
            reports.append(report)
            print(f"{n_layers:>6} {bits:>6} {report.compute.mean_ms:>11.1f} "
                  f"{report.compute.p95_ms:>8.1f} {report.total.mean_ms:>9.1f} "
                  f"{report.flops.total:>12,}")
    if args.csv:
        write_bench_csv(args.csv, reports)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
