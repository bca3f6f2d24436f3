"""becr: a CPU-friendly composite re-ranker.

Candidate documents are re-scored by adding three signal families: kernel-pooled
similarities between composed query token-group embeddings and per-term document
embeddings (optionally compressed to LSH sign footprints), classic lexical
statistics (BM25, tf*idf, term proximity), and per-document scalars such as
PageRank plus a projected [CLS] vector. Token-group and document embeddings are
precomputed offline and served from binary stores, so no encoder runs at query
time.
"""

from becr.bench import BenchConfig, BenchReport, run_bench
from becr.core import (
    HyperplaneSet,
    KernelBank,
    LshFootprint,
    ZeroNormWarning,
    cosine_estimate,
    cosine_exact,
    hamming,
    kernel_pool,
    lsh_footprint,
    sample_hyperplanes,
)
from becr.evaluation import (
    Qrels,
    Run,
    mrr_at_k,
    ndcg_at_k,
    p_at_k,
    paired_t_test,
    parse_qrels,
    parse_run,
)
from becr.flops import FlopBreakdown, FlopModel, flop_count
from becr.scoring import (
    ModelWeights,
    RerankResult,
    ScoreBreakdown,
    Scorer,
    load_weights,
    save_weights,
)
from becr.stores import (
    DocStore,
    StoreConfig,
    TokenStore,
    build_doc_store,
    build_token_store,
    open_doc_store,
    open_token_store,
    storage_estimate,
)
from becr.training import FeatureCache, TrainConfig, TrainingPair, pair_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "BenchReport",
    "DocStore",
    "FeatureCache",
    "FlopBreakdown",
    "FlopModel",
    "HyperplaneSet",
    "KernelBank",
    "LshFootprint",
    "ModelWeights",
    "Qrels",
    "RerankResult",
    "Run",
    "ScoreBreakdown",
    "Scorer",
    "StoreConfig",
    "TokenStore",
    "TrainConfig",
    "TrainingPair",
    "ZeroNormWarning",
    "build_doc_store",
    "build_token_store",
    "cosine_estimate",
    "cosine_exact",
    "flop_count",
    "hamming",
    "kernel_pool",
    "load_weights",
    "lsh_footprint",
    "mrr_at_k",
    "ndcg_at_k",
    "open_doc_store",
    "open_token_store",
    "p_at_k",
    "pair_accuracy",
    "paired_t_test",
    "parse_qrels",
    "parse_run",
    "run_bench",
    "sample_hyperplanes",
    "save_weights",
    "storage_estimate",
    "train",
    "__version__",
]
