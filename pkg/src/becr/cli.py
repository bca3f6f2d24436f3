"""Command line entry points.

Every subcommand exits 0 on success. Failures print exactly one line to
stderr shaped as "becr: error: <ExceptionName>: <message>" and exit 1, so
wrapper scripts can branch on the exception name without scraping tracebacks.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from contextlib import ExitStack
from pathlib import Path

from becr.bench import BenchConfig, run_bench, write_bench_csv
from becr.compose import ComposeConfig
from becr.evaluation import (
    compute_metric,
    paired_t_test,
    parse_qrels,
    parse_run,
    summary_lines,
    write_metrics_csv,
)
from becr.lexical import (
    FeatureSchema,
    build_corpus_stats,
    load_corpus_stats,
    save_corpus_stats,
)
from becr.scoring import ModelWeights, Scorer, load_weights, save_weights
from becr.stores import (
    StoreConfig,
    build_doc_store,
    build_token_store,
    format_bytes,
    open_doc_store,
    open_token_store,
    read_export,
    storage_estimate,
)
from becr.training import (
    FeatureCache,
    TrainConfig,
    mean_loss,
    pair_accuracy,
    read_pairs,
    train,
    write_loss_trace,
)


def _parse_layers(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.split(",") if x.strip() != "")
    except ValueError:
        raise ValueError(f"layer list must be comma-separated integers, got {raw!r}")


def _parse_count(raw: str) -> float:
    """Counts accept scientific notation on the command line: 50e6, 14.5e6."""
    value = float(raw)
    if value < 0:
        raise ValueError(f"count must be non-negative, got {raw!r}")
    return value


def _table_bytes(n: int) -> str:
    # Storage tables quote TB and GB; format_bytes would jump to PB.
    if n >= 1e12:
        return f"{n / 1e12:,.1f} TB"
    if n >= 1e9:
        return f"{n / 1e9:,.1f} GB"
    return format_bytes(n)


def _schema_from_args(args: argparse.Namespace) -> FeatureSchema:
    return FeatureSchema.from_name(args.schema, k1=args.k1, b_param=args.b)


def _add_store_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--doc-store", required=True, help=".becrdoc path")
    p.add_argument("--token-store", required=True, help=".becrtok path")
    p.add_argument("--stats", required=True, help="corpus statistics path")
    p.add_argument("--weights", required=True, help=".becrwts path")
    p.add_argument("--window", type=int, default=3, help="pair window (default 3)")


def _open_scorer(stack: ExitStack, args: argparse.Namespace) -> Scorer:
    doc_store = stack.enter_context(open_doc_store(args.doc_store))
    token_store = stack.enter_context(open_token_store(args.token_store))
    weights = load_weights(args.weights)
    stats = load_corpus_stats(args.stats)
    compose = ComposeConfig(window=args.window)
    return Scorer(weights, doc_store, token_store, stats, compose)


# -- subcommand handlers ------------------------------------------------------


def _cmd_build_store(args: argparse.Namespace, target: str) -> int:
    export = read_export(args.export)
    layer_ids = _parse_layers(args.layers)
    config = StoreConfig(
        mode=args.mode,
        dim=export.dim,
        layer_ids=layer_ids,
        bits=args.bits if args.mode == "lsh" else 0,
        seed=args.seed,
    )
    if target == "documents":
        count = build_doc_store(export, config, args.out)
        noun = "documents"
    else:
        count = build_token_store(export, config, args.out)
        noun = "token groups"
    if args.stats is not None:
        stats = build_corpus_stats(doc.fields for doc in export.documents)
        save_corpus_stats(args.stats, stats)
    print(f"wrote {count} {noun} to {args.out} ({config.mode}, L'={config.n_layers})")
    return 0


def _cmd_rerank(args: argparse.Namespace) -> int:
    candidates = [
        line.strip()
        for line in Path(args.candidates).read_text().splitlines()
        if line.strip()
    ]
    with ExitStack() as stack:
        scorer = _open_scorer(stack, args)
        result = scorer.rerank(
            args.query, candidates, top_k=args.top_k, threads=args.threads
        )
    for doc_id, message in result.failures:
        print(f"becr: warning: {doc_id}: {message}", file=sys.stderr)
    lines = result.trec_lines(args.qid, tag=args.tag)
    if args.out is not None:
        Path(args.out).write_text("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    if not result.ranking and result.failures:
        raise RuntimeError("no candidate could be scored")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    queries = {}
    for lineno, line in enumerate(Path(args.queries).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{args.queries}:{lineno}: expected 'qid<TAB>query text'")
        queries[parts[0]] = parts[1]
    pairs = read_pairs(args.pairs)

    with ExitStack() as stack:
        doc_store = stack.enter_context(open_doc_store(args.doc_store))
        token_store = stack.enter_context(open_token_store(args.token_store))
        stats = load_corpus_stats(args.stats)
        if args.init is not None:
            weights = load_weights(args.init)
        else:
            gamma_names = tuple(
                x for x in (args.gamma_features or "").split(",") if x.strip()
            )
            weights = ModelWeights.zeros(
                n_layers=doc_store.config.n_layers,
                dim=doc_store.config.dim,
                schema=_schema_from_args(args),
                gamma_names=gamma_names,
            )
        compose = ComposeConfig(window=args.window)
        cache = FeatureCache(
            queries, doc_store, token_store, stats, weights.schema, compose
        )
        config = TrainConfig(
            learning_rate=args.lr,
            iterations=args.iterations,
            batch_size=args.batch_size,
            seed=args.seed,
            sigma_min=args.sigma_min,
            optimizer=args.optimizer,
            frozen_components=tuple(
                x for x in (args.freeze or "").split(",") if x.strip()
            ),
        )
        result = train(pairs, weights, config, cache)
        final_loss = mean_loss(result.weights, pairs, cache)
        accuracy = pair_accuracy(result.weights, pairs, cache)

    save_weights(args.out, result.weights)
    if args.loss_trace is not None:
        write_loss_trace(args.loss_trace, result.trace)
    print(
        f"trained {args.iterations} iterations on {len(pairs)} pairs: "
        f"loss {final_loss:.6f}, pair accuracy {accuracy:.4f}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    run = parse_run(args.run)
    qrels = parse_qrels(args.qrels)
    names = args.metric or ["ndcg@5"]
    results = [compute_metric(run, qrels, name) for name in names]
    if args.csv is not None:
        write_metrics_csv(args.csv, results)
    for line in summary_lines(results):
        print(line)
    if args.compare is not None:
        other = parse_run(args.compare)
        for name in names:
            mine = compute_metric(run, qrels, name)
            theirs = compute_metric(other, qrels, name)
            shared = sorted(mine.per_query.keys() & theirs.per_query.keys())
            if not shared:
                raise ValueError(f"no shared queries between runs for {name}")
            test = paired_t_test(
                [mine.per_query[q] for q in shared],
                [theirs.per_query[q] for q in shared],
            )
            if test.zero_variance:
                verdict = "not significant (zero variance)"
            else:
                verdict = "significant" if test.significant else "not significant"
            print(
                f"{name}: {mine.mean:.4f} vs {theirs.mean:.4f} "
                f"(diff {test.mean_difference:+.4f}, t={test.t_statistic:.3f}, "
                f"p={test.p_value:.4f}, {verdict})"
            )
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = BenchConfig(
        mode=args.mode,
        n_docs=args.docs,
        doc_len=args.doc_len,
        q_len=args.terms,
        n_layers=args.layers,
        bits=args.bits,
        dim=args.dim,
        seed=args.seed,
        threads=args.threads,
        repeats=args.repeats,
    )
    if args.workdir is not None:
        report = run_bench(config, args.workdir)
    else:
        with tempfile.TemporaryDirectory(prefix="becr-bench-") as workdir:
            report = run_bench(config, workdir)
    print(report.as_text())
    if args.csv is not None:
        write_bench_csv(args.csv, [report])
    return 0


def _cmd_storage_estimate(args: argparse.Namespace) -> int:
    total = storage_estimate(
        args.target,
        args.codec,
        m=args.m,
        layers=args.L,
        kept_layers=args.L_used,
        bits=args.bits,
        doc_count=args.D,
        unigram_count=args.V,
        pair_count=args.H,
        dim=args.dim,
    )
    print(f"{_table_bytes(total)} ({total:,} bytes)")
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    with ExitStack() as stack:
        scorer = _open_scorer(stack, args)
        explanation = scorer.explain_pair(args.query, args.doc_a, args.doc_b)
    if args.json:
        print(json.dumps(explanation.as_dict(), indent=2, sort_keys=True))
    else:
        print(explanation.as_text())
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="becr",
        description="Composite reranking over precomputed token embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, target in (("build-doc-store", "documents"), ("build-token-store", "tokens")):
        p = sub.add_parser(name, help=f"pack an encoder export into a {target} store")
        p.add_argument("--export", required=True, help=".becrexp input")
        p.add_argument("--out", required=True, help="store output path")
        p.add_argument("--mode", choices=["full", "lsh"], default="lsh")
        p.add_argument("--layers", required=True, help="encoder layer ids, e.g. 0,1,12")
        p.add_argument("--bits", type=int, default=256, help="footprint bits (lsh)")
        p.add_argument("--seed", type=int, default=0, help="hyperplane seed")
        p.add_argument("--stats", default=None, help="also write corpus statistics here")
        p.set_defaults(handler=lambda a, t=target: _cmd_build_store(a, t))

    p = sub.add_parser("rerank", help="score candidates for one query")
    _add_store_flags(p)
    p.add_argument("--query", required=True)
    p.add_argument("--qid", default="q1")
    p.add_argument("--candidates", required=True, help="file with one doc id per line")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="run file output (default stdout)")
    p.add_argument("--tag", default="becr")
    p.set_defaults(handler=_cmd_rerank)

    p = sub.add_parser("train", help="fit weights on preference pairs")
    p.add_argument("--doc-store", required=True)
    p.add_argument("--token-store", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--queries", required=True, help="TSV: qid<TAB>query text")
    p.add_argument("--pairs", required=True, help="TSV: qid<TAB>positive<TAB>negative")
    p.add_argument("--out", required=True, help="weights output path")
    p.add_argument("--init", default=None, help="starting weights (default zeros)")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--optimizer",
        choices=["plain-sgd", "adaptive-moments"],
        default="adaptive-moments",
    )
    p.add_argument("--sigma-min", type=float, default=1e-3)
    p.add_argument("--freeze", default=None, help="components to hold fixed, e.g. beta,gamma")
    p.add_argument("--loss-trace", default=None, help="CSV of per-iteration loss")
    p.add_argument("--schema", choices=["web", "passage"], default="web")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--gamma-features", default=None, help="doc feature names, e.g. pagerank")
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="score a run file against judgments")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument(
        "--metric",
        action="append",
        default=None,
        help="metric@k, repeatable (ndcg@5, p@20, mrr@10); default ndcg@5",
    )
    p.add_argument("--csv", default=None, help="per-query values output")
    p.add_argument("--compare", default=None, help="second run for a paired t-test")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("bench", help="time synthetic reranking")
    p.add_argument("--mode", choices=["full", "lsh"], default="lsh")
    p.add_argument("--docs", type=int, default=150)
    p.add_argument("--doc-len", type=int, default=857)
    p.add_argument("--terms", type=int, default=5)
    p.add_argument("--layers", type=int, default=5, help="kept layer count")
    p.add_argument("--bits", type=int, default=256)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--csv", default=None)
    p.add_argument("--workdir", default=None, help="keep stores here (default: temp)")
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("storage-estimate", help="closed-form store size")
    p.add_argument("--target", choices=["documents", "tokens"], default="documents")
    p.add_argument("--codec", choices=["original", "compressed"], default="original")
    p.add_argument("--m", type=_parse_count, default=0, help="terms per document")
    p.add_argument("--L", type=int, default=0, help="encoder layers")
    p.add_argument("--L-used", dest="L_used", type=int, default=0, help="kept layers")
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--D", type=_parse_count, default=0, help="document count")
    p.add_argument("--V", type=_parse_count, default=0, help="unigram count")
    p.add_argument("--H", type=_parse_count, default=0, help="pair count")
    p.add_argument("--dim", type=int, default=768)
    p.set_defaults(handler=_cmd_storage_estimate)

    p = sub.add_parser("explain", help="attribute the score gap between two docs")
    _add_store_flags(p)
    p.add_argument("--query", required=True)
    p.add_argument("--doc-a", required=True)
    p.add_argument("--doc-b", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_explain)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:
        message = str(exc).replace("\n", " ")
        print(f"becr: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
