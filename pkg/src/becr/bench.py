"""Reranking latency measurement with the store fetch split from scoring.

One repetition fetches every candidate record, then scores them all, then
sorts; the three phases are timed separately plus end to end, and statistics
are taken across repetitions after one untimed warm-up. Wall-clock numbers
are reported with their spread and never asserted exactly; the operation
counts from the flop model are the deterministic half of the report.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from becr.flops import FlopBreakdown, FlopModel, flop_count
from becr.lexical import FeatureSchema
from becr.scoring import ModelWeights, Scorer, thread_count
from becr.stores import (
    StoreConfig,
    build_doc_store,
    build_token_store,
    open_doc_store,
    open_token_store,
)
from becr.synth import make_bench_instance


@dataclass(frozen=True)
class BenchConfig:
    mode: str = "lsh"
    n_docs: int = 150
    doc_len: int = 857
    q_len: int = 5
    n_layers: int = 5
    bits: int = 256
    dim: int = 32
    seed: int = 0
    threads: int | None = None
    repeats: int = 5

    def label(self) -> str:
        threads = thread_count(self.threads)
        bits = self.bits if self.mode == "lsh" else 0
        return (
            f"mode={self.mode};b={bits};L={self.n_layers};n={self.q_len};"
            f"m={self.doc_len};docs={self.n_docs};threads={threads}"
        )


@dataclass(frozen=True)
class PhaseStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float

    @classmethod
    def from_seconds(cls, samples: list[float]) -> "PhaseStats":
        ms = np.asarray(samples) * 1e3
        return cls(
            mean_ms=float(ms.mean()),
            p50_ms=float(np.percentile(ms, 50)),
            p95_ms=float(np.percentile(ms, 95)),
        )


@dataclass
class BenchReport:
    config: BenchConfig
    docs: int
    fetch: PhaseStats
    compute: PhaseStats
    total: PhaseStats
    flops: FlopBreakdown
    failures: list[str] = field(default_factory=list)

    def csv_rows(self) -> list[str]:
        label = self.config.label()
        rows = []
        for phase, stats in (
            ("fetch", self.fetch),
            ("compute", self.compute),
            ("total", self.total),
        ):
            rows.append(f"{label},{phase},mean_ms,{stats.mean_ms:.3f}")
            rows.append(f"{label},{phase},p50_ms,{stats.p50_ms:.3f}")
            rows.append(f"{label},{phase},p95_ms,{stats.p95_ms:.3f}")
        for category, count in self.flops.as_dict().items():
            rows.append(f"{label},flops,{category},{count}")
        return rows

    def as_text(self) -> str:
        lines = [
            f"config   {self.config.label()}",
            f"docs     {self.docs}",
            "phase     mean_ms   p50_ms    p95_ms",
        ]
        for phase, stats in (
            ("fetch", self.fetch),
            ("compute", self.compute),
            ("total", self.total),
        ):
            lines.append(
                f"{phase:<8} {stats.mean_ms:>9.2f} {stats.p50_ms:>9.2f} {stats.p95_ms:>9.2f}"
            )
        lines.append(
            "flops/doc "
            + "  ".join(f"{k}={v:,}" for k, v in self.flops.as_dict().items())
        )
        return "\n".join(lines)


def write_bench_csv(path: str | Path, reports: list[BenchReport]) -> None:
    lines = ["config,phase,metric,value"]
    for report in reports:
        lines.extend(report.csv_rows())
    Path(path).write_text("\n".join(lines) + "\n")


def _bench_weights(config: BenchConfig) -> ModelWeights:
    rng = np.random.default_rng(config.seed + 1)
    schema = FeatureSchema()
    from becr.core import KernelBank

    kernels = KernelBank.default()
    return ModelWeights(
        kernels=kernels,
        alpha=rng.normal(scale=0.05, size=(kernels.size, config.n_layers)),
        beta=np.abs(rng.normal(scale=0.1, size=schema.size)),
        cls_projection=rng.normal(scale=0.02, size=config.dim),
        gamma={"pagerank": 0.3},
        schema=schema,
    )


def run_bench(config: BenchConfig, workdir: str | Path) -> BenchReport:
    """Build a synthetic corpus and stores under workdir, then time reranking."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    layer_ids = tuple(range(config.n_layers))
    inst = make_bench_instance(
        config.seed,
        n_docs=config.n_docs,
        doc_len=config.doc_len,
        q_len=config.q_len,
        dim=config.dim,
        layer_ids=layer_ids,
    )
    store_cfg = StoreConfig(
        mode=config.mode,
        dim=config.dim,
        layer_ids=layer_ids,
        bits=config.bits if config.mode == "lsh" else 0,
        seed=config.seed,
    )
    doc_path = workdir / "bench.becrdoc"
    tok_path = workdir / "bench.becrtok"
    build_doc_store(inst.export, store_cfg, doc_path)
    build_token_store(inst.export, store_cfg, tok_path)

    weights = _bench_weights(config)
    workers = thread_count(config.threads)
    fetch_times: list[float] = []
    compute_times: list[float] = []
    total_times: list[float] = []

    with open_doc_store(doc_path) as doc_store, open_token_store(tok_path) as token_store:
        scorer = Scorer(weights, doc_store, token_store, inst.corpus_stats())
        plan = scorer.plan(inst.query)

        def one_repetition(timed: bool) -> None:
            t0 = time.perf_counter()
            records = [doc_store.fetch(doc_id) for doc_id in inst.doc_ids]
            t1 = time.perf_counter()
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    scores = list(
                        pool.map(lambda r: scorer.score_record(plan, r).total, records)
                    )
            else:
                scores = [scorer.score_record(plan, r).total for r in records]
            t2 = time.perf_counter()
            ranked = sorted(zip(inst.doc_ids, scores), key=lambda p: (-p[1], p[0]))
            assert len(ranked) == len(records)
            t3 = time.perf_counter()
            if timed:
                fetch_times.append(t1 - t0)
                compute_times.append(t2 - t1)
                total_times.append(t3 - t0)

        one_repetition(timed=False)
        for _ in range(config.repeats):
            one_repetition(timed=True)

        groups_per_term = float(np.mean([len(r) for r in plan.resolved]))
        model = FlopModel(
            mode=config.mode,
            n_terms=len(plan.terms),
            doc_len=config.doc_len,
            n_layers=config.n_layers,
            dim=config.dim,
            n_kernels=weights.kernels.size,
            bits=config.bits if config.mode == "lsh" else 0,
            groups_per_term=groups_per_term,
        )

    return BenchReport(
        config=config,
        docs=config.n_docs,
        fetch=PhaseStats.from_seconds(fetch_times),
        compute=PhaseStats.from_seconds(compute_times),
        total=PhaseStats.from_seconds(total_times),
        flops=flop_count(model),
    )
