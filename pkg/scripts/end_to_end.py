#!/usr/bin/env python3
"""Run the whole pipeline on a synthetic corpus and report ranking quality.

Generates an encoder export with planted relevance grades, builds exact and
fingerprinted stores from it, trains composite weights on grade-ordered pairs,
then re-ranks with both stores and compares the outcomes.

Usage:
  python3 scripts/end_to_end.py --seed 21 --docs 24 --bits 256 --iterations 600

The script prints training diagnostics, NDCG@5 under the exact and the
fingerprinted stores, and the top of both rankings side by side.
"""

from __future__ import annotations

import argparse
import tempfile
from dataclasses import replace
from pathlib import Path

from becr.evaluation import Qrels, Run, ndcg_at_k
from becr.scoring import ModelWeights, Scorer
from becr.stores import (
    StoreConfig,
    build_doc_store,
    build_token_store,
    open_doc_store,
    open_token_store,
)
from becr.synth import make_instance
from becr.training import FeatureCache, TrainConfig, TrainingPair, pair_accuracy, train


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=21)
    parser.add_argument("--docs", type=int, default=24)
    parser.add_argument("--doc-len", type=int, default=48)
    parser.add_argument("--dim", type=int, default=24)
    parser.add_argument("--bits", type=int, default=256)
    parser.add_argument("--iterations", type=int, default=600)
    parser.add_argument("--lr", type=float, default=0.02)
    parser.add_argument("--out-dir", type=Path, default=None,
                        help="keep stores and weights here instead of a temp dir")
    return parser.parse_args()


def build_stores(export, config: StoreConfig, directory: Path, name: str):
    doc_path = directory / f"{name}.becrdoc"
    tok_path = directory / f"{name}.becrtok"
    build_doc_store(export, config, doc_path)
    build_token_store(export, config, tok_path)
    return doc_path, tok_path


def ndcg_over(scorer: Scorer, query: str, grades: dict[str, int]) -> tuple[float, list]:
    ranking = scorer.rerank(query, list(grades)).ranking
    run = Run(entries={"q1": [(r.doc_id, r.score) for r in ranking]})
    qrels = Qrels(grades={"q1": grades})
    return ndcg_at_k(run, qrels, 5).mean, ranking


def main() -> int:
    args = parse_args()
    inst = make_instance(
        args.seed,
        dim=args.dim,
        layer_ids=(0, 1),
        n_docs=args.docs,
        doc_len=args.doc_len,
        q_len=4,
        signal=0.7,
    )
    stats = inst.corpus_stats()
    print(f"query: {inst.query!r}")
    print(f"corpus: {args.docs} documents, {args.doc_len} terms each, dim={args.dim}")

    with tempfile.TemporaryDirectory() as tmp:
        directory = args.out_dir or Path(tmp)
        directory.mkdir(parents=True, exist_ok=True)

        full_cfg = StoreConfig(mode="full", dim=args.dim, layer_ids=(0, 1), seed=0)
        lsh_cfg = replace(full_cfg, mode="lsh", bits=args.bits)
        full_doc, full_tok = build_stores(inst.export, full_cfg, directory, "exact")
        lsh_doc, lsh_tok = build_stores(inst.export, lsh_cfg, directory, "packed")

        pairs = [
            TrainingPair("q1", p, n)
            for p in inst.doc_ids
            for n in inst.doc_ids
            if inst.grades[p] > inst.grades[n]
        ]
        init = ModelWeights.zeros(2, args.dim, gamma_names=("pagerank",))
        schedule = TrainConfig(
            learning_rate=args.lr, iterations=args.iterations, batch_size=32, seed=3
        )

        with open_doc_store(full_doc) as ds, open_token_store(full_tok) as ts:
            cache = FeatureCache({"q1": inst.query}, ds, ts, stats, init.schema)
            result = train(pairs, init, schedule, cache)
            accuracy = pair_accuracy(result.weights, pairs, cache)
            print(f"trained {args.iterations} iterations on {len(pairs)} pairs: "
                  f"final loss {result.trace[-1][1]:.4f}, pair accuracy {accuracy:.3f}")
            exact_ndcg, exact_ranking = ndcg_over(
                Scorer(result.weights, ds, ts, stats), inst.query, inst.grades
            )

        with open_doc_store(lsh_doc) as ds, open_token_store(lsh_tok) as ts:
            packed_ndcg, packed_ranking = ndcg_over(
                Scorer(result.weights, ds, ts, stats), inst.query, inst.grades
            )

        print(f"ndcg@5 exact store:  {exact_ndcg:.4f}")
        print(f"ndcg@5 {args.bits}-bit store: {packed_ndcg:.4f}")
        print("rank  exact                packed")
        for i in range(min(5, len(exact_ranking))):
            e, p = exact_ranking[i], packed_ranking[i]
            print(f"{i + 1:>4}  {e.doc_id:<12} {e.score:>7.3f}  "
                  f"{p.doc_id:<12} {p.score:>7.3f}")
        if args.out_dir:
            print(f"stores kept in {directory}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
