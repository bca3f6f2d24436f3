#!/usr/bin/env python3
"""Measure how ranking fidelity degrades as fingerprints get narrower.

Builds one synthetic corpus, scores it once with exact embeddings and once
per fingerprint width, and reports rank correlation against the exact
ranking plus the worst kernel-feature drift, the two quantities that decide
whether a width is usable.

Usage:
  python3 scripts/fidelity_sweep.py --bits 64 128 256 1024 4096
"""

from __future__ import annotations

import argparse
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from becr.core import KernelBank
from becr.scoring import ModelWeights, Scorer, deep_features_resolved
from becr.stores import (
    StoreConfig,
    build_doc_store,
    build_token_store,
    open_doc_store,
    open_token_store,
)
from becr.synth import make_fidelity_instance


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=33)
    parser.add_argument("--docs", type=int, default=20)
    parser.add_argument("--doc-len", type=int, default=4000)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--bits", type=int, nargs="+", default=[64, 128, 256, 1024, 4096])
    return parser.parse_args()


def kendall_tau(a: list[str], b: list[str]) -> float:
    pos = {doc: i for i, doc in enumerate(b)}
    concordant = discordant = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            if pos[a[i]] < pos[a[j]]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (concordant + discordant)


def score_once(inst, weights, config: StoreConfig, directory: Path, name: str):
    doc_path = directory / f"{name}.becrdoc"
    tok_path = directory / f"{name}.becrtok"
    build_doc_store(inst.export, config, doc_path)
    build_token_store(inst.export, config, tok_path)
    kernels = KernelBank.default()
    with open_doc_store(doc_path) as ds, open_token_store(tok_path) as ts:
        scorer = Scorer(weights, ds, ts, inst.corpus_stats())
        ranking = [r.doc_id for r in scorer.rerank(inst.query, inst.doc_ids).ranking]
        plan = scorer.plan(inst.query)
        grids = np.stack([
            deep_features_resolved(
                plan.resolved, ds.fetch(doc), kernels, config.mode, config.bits
            )
            for doc in inst.doc_ids
        ])
    return ranking, grids


def main() -> int:
    args = parse_args()
    inst = make_fidelity_instance(
        args.seed, n_docs=args.docs, doc_len=args.doc_len, dim=args.dim
    )
    layers = (0, 1)
    rng = np.random.default_rng(8)
    kernels = KernelBank.default()
    weights = ModelWeights.zeros(len(layers), args.dim, gamma_names=("pagerank",))
    weights = replace(
        weights,
        alpha=rng.normal(scale=0.05, size=(kernels.size, len(layers))),
        beta=np.abs(rng.normal(scale=0.1, size=weights.schema.size)),
        cls_projection=rng.normal(scale=0.02, size=args.dim),
        gamma={"pagerank": 0.3},
    )

    with tempfile.TemporaryDirectory() as tmp:
        directory = Path(tmp)
        exact_cfg = StoreConfig(mode="full", dim=args.dim, layer_ids=layers, seed=9)
        exact_ranking, exact_grids = score_once(inst, weights, exact_cfg, directory, "exact")

        print(f"query: {inst.query!r}; {args.docs} documents of {args.doc_len} terms")
        print(f"{'bits':>6} {'kendall tau':>12} {'worst drift':>12} {'mean drift':>11}")
        for bits in args.bits:
            config = replace(exact_cfg, mode="lsh", bits=bits)
            ranking, grids = score_once(inst, weights, config, directory, f"b{bits}")
            drift = np.abs(grids - exact_grids)
            print(f"{bits:>6} {kendall_tau(exact_ranking, ranking):>12.4f} "
                  f"{float(drift.max()):>12.4f} {float(drift.mean()):>11.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
