"""Additive composite scoring: S = S_deep + S_lexi + S_others.

The deep component pools composed query-term similarities against every
document term through the kernel bank and weights the pooled grid; the
lexical component is a linear model over the classical feature vector; the
"others" component projects the stored [CLS] vector and adds weighted named
document scalars such as pagerank.

Scoring is pure given immutable stores and weights. A query is planned once
(tokenize, decompose, resolve token groups) and the plan is reused across all
candidates, which is what makes reranking a fetch-then-compute loop over
records.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from becr.compose import (
    ComposeConfig,
    GroupLookup,
    QueryTerm,
    ResolvedGroup,
    TokenGroupSet,
    compose_resolved,
    decompose_config,
    resolve_term_groups,
    tokenize,
)
from becr.core import KernelBank, kernel_pool_grid
from becr.lexical import (
    CorpusStats,
    FeatureSchema,
    SchemaMismatchError,
    assemble_lexical_features,
)
from becr.stores import (
    DocStore,
    DocumentNotFoundError,
    DocumentRecord,
    TokenStore,
    require_compatible,
)

WEIGHTS_MAGIC = b"BECRWTS1"
WEIGHTS_VERSION = 1

COMPONENT_DEEP = "deep"
COMPONENT_LEXICAL = "lexical"
COMPONENT_OTHERS = "others"
COMPONENTS = (COMPONENT_DEEP, COMPONENT_LEXICAL, COMPONENT_OTHERS)

CLS_FEATURE = "cls"


def thread_count(requested: int | None = None) -> int:
    """Requested threads, else the BECR_THREADS environment setting, else 1."""
    if requested is not None:
        if requested < 1:
            raise ValueError("thread count must be >= 1")
        return requested
    raw = os.environ.get("BECR_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"BECR_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


# ----------------------------------------------------------------------------
# model weights
# ----------------------------------------------------------------------------


@dataclass
class ModelWeights:
    """All learned parameters plus the schema they are sized against.

    alpha has shape (K, L') and is shared across query terms; beta matches
    the lexical schema column for column; cls_projection reduces the stored
    [CLS] vector to one scalar; gamma holds one weight per named document
    feature. One bias per component.
    """

    kernels: KernelBank
    alpha: np.ndarray
    beta: np.ndarray
    cls_projection: np.ndarray
    gamma: dict[str, float] = field(default_factory=dict)
    bias_deep: float = 0.0
    bias_lexical: float = 0.0
    bias_others: float = 0.0
    schema: FeatureSchema = field(default_factory=FeatureSchema)

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.cls_projection = np.asarray(self.cls_projection, dtype=np.float64)
        if self.alpha.ndim != 2 or self.alpha.shape[0] != self.kernels.size:
            raise ValueError(
                f"alpha must be (K={self.kernels.size}, L'), got {self.alpha.shape}"
            )
        if self.beta.shape != (self.schema.size,):
            raise ValueError(
                f"beta must match the {self.schema.size}-column schema, got {self.beta.shape}"
            )
        if self.cls_projection.ndim != 1:
            raise ValueError("cls_projection must be a vector of length p")

    @property
    def n_layers(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def dim(self) -> int:
        return int(self.cls_projection.shape[0])

    @classmethod
    def zeros(
        cls,
        n_layers: int,
        dim: int,
        schema: FeatureSchema | None = None,
        kernels: KernelBank | None = None,
        gamma_names: Iterable[str] = (),
    ) -> "ModelWeights":
        schema = schema if schema is not None else FeatureSchema()
        kernels = kernels if kernels is not None else KernelBank.default()
        return cls(
            kernels=kernels,
            alpha=np.zeros((kernels.size, n_layers)),
            beta=np.zeros(schema.size),
            cls_projection=np.zeros(dim),
            gamma={name: 0.0 for name in gamma_names},
            schema=schema,
        )

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            kernels=self.kernels.copy(),
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            cls_projection=self.cls_projection.copy(),
            gamma=dict(self.gamma),
            bias_deep=self.bias_deep,
            bias_lexical=self.bias_lexical,
            bias_others=self.bias_others,
            schema=self.schema,
        )


def zeroed(weights: ModelWeights, component: str) -> ModelWeights:
    """Copy with one scoring component disabled outright (weights and bias)."""
    out = weights.copy()
    if component == COMPONENT_DEEP:
        out.alpha[:] = 0.0
        out.bias_deep = 0.0
    elif component == COMPONENT_LEXICAL:
        out.beta[:] = 0.0
        out.bias_lexical = 0.0
    elif component == COMPONENT_OTHERS:
        out.cls_projection[:] = 0.0
        out.gamma = {name: 0.0 for name in out.gamma}
        out.bias_others = 0.0
    else:
        raise ValueError(f"unknown component {component!r}, expected one of {COMPONENTS}")
    return out


def save_weights(path: str | Path, weights: ModelWeights) -> None:
    """Versioned binary: JSON manifest naming float64 blocks, then the blocks."""
    arrays = {
        "kernel_mus": weights.kernels.mus,
        "kernel_sigmas": weights.kernels.sigmas,
        "alpha": weights.alpha,
        "beta": weights.beta,
        "cls_projection": weights.cls_projection,
        "gamma_values": np.array([weights.gamma[k] for k in sorted(weights.gamma)]),
    }
    manifest = {
        "version": WEIGHTS_VERSION,
        "schema": {
            "include_title": weights.schema.include_title,
            "pair_bm25": weights.schema.pair_bm25,
            "pair_window": weights.schema.pair_window,
            "k1": weights.schema.k1,
            "b_param": weights.schema.b_param,
        },
        "gamma_names": sorted(weights.gamma),
        "biases": {
            "deep": weights.bias_deep,
            "lexical": weights.bias_lexical,
            "others": weights.bias_others,
        },
        "blocks": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()],
    }
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as out:
        out.write(WEIGHTS_MAGIC)
        out.write(struct.pack("<Q", len(header)))
        out.write(header)
        for arr in arrays.values():
            out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path: str | Path) -> ModelWeights:
    raw = Path(path).read_bytes()
    if raw[:8] != WEIGHTS_MAGIC:
        raise ValueError(f"{path} is not a weights file (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    manifest = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if manifest.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {manifest.get('version')}")
    off = 16 + header_len
    blocks: dict[str, np.ndarray] = {}
    for spec_ in manifest["blocks"]:
        count = int(np.prod(spec_["shape"])) if spec_["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        blocks[spec_["name"]] = arr.reshape(spec_["shape"]).astype(np.float64)
        off += 8 * count
    schema = FeatureSchema(**manifest["schema"])
    gamma = dict(zip(manifest["gamma_names"], blocks["gamma_values"].tolist()))
    biases = manifest["biases"]
    return ModelWeights(
        kernels=KernelBank(mus=blocks["kernel_mus"], sigmas=blocks["kernel_sigmas"]),
        alpha=blocks["alpha"],
        beta=blocks["beta"],
        cls_projection=blocks["cls_projection"],
        gamma=gamma,
        bias_deep=float(biases["deep"]),
        bias_lexical=float(biases["lexical"]),
        bias_others=float(biases["others"]),
        schema=schema,
    )


# ----------------------------------------------------------------------------
# deep feature grids
# ----------------------------------------------------------------------------


def _similarity_rows_full(
    resolved: Sequence[ResolvedGroup], doc_vectors: np.ndarray
) -> np.ndarray:
    """Exact cosines of the composed term embedding against every doc term.

    doc_vectors: (m, L', p). Returns (L', m); zero-norm operands yield 0.
    """
    composed = compose_resolved(resolved)  # (L', p)
    docs = doc_vectors.astype(np.float64, copy=False)
    numer = np.einsum("mlp,lp->lm", docs, composed)
    doc_norms = np.linalg.norm(docs, axis=2).T  # (L', m)
    q_norms = np.linalg.norm(composed, axis=1)[:, None]
    denom = doc_norms * q_norms
    sims = np.divide(numer, denom, out=np.zeros_like(numer), where=denom > 0)
    return np.clip(sims, -1.0, 1.0)


_COS_TABLES: dict[int, np.ndarray] = {}


def _cos_table(bits: int) -> np.ndarray:
    """cos(pi * h / bits) for every Hamming distance h in [0, bits].

    Distances are integers, so a gather replaces per-element cosine calls in
    the reranking loop without changing a single output bit.
    """
    table = _COS_TABLES.get(bits)
    if table is None:
        table = np.cos(np.pi * np.arange(bits + 1, dtype=np.float64) / bits)
        _COS_TABLES[bits] = table
    return table


def _group_footprint(r: ResolvedGroup, bits: int) -> np.ndarray:
    if r.embedding.footprints is None or r.embedding.bits is None:
        raise ValueError(f"group {r.group.id!r} holds no LSH footprints")
    if r.embedding.bits != bits:
        raise ValueError(
            f"mixed LSH configurations: group {r.group.id!r} has "
            f"{r.embedding.bits} bits, store uses {bits}"
        )
    return r.embedding.footprints[r.member]


def _footprint_estimates(
    stacked: np.ndarray, doc_footprints: np.ndarray, bits: int
) -> np.ndarray:
    """SimHash cosine estimates (G, m, L') of stacked (G, L', W) footprints.

    The byte-count sum runs through einsum because a ufunc reduce over a
    4-element axis costs more than the popcount itself.
    """
    xored = np.bitwise_xor(stacked[:, None, :, :], doc_footprints[None, :, :, :])
    h = np.einsum("...w->...", np.bitwise_count(xored), dtype=np.intp)
    return _cos_table(bits)[h]


def _similarity_rows_lsh(
    resolved: Sequence[ResolvedGroup], doc_footprints: np.ndarray, bits: int
) -> np.ndarray:
    """Weighted SimHash estimates against every doc term footprint.

    doc_footprints: (m, L', W) uint64. Returns (L', m) float64.
    """
    stacked = np.stack([_group_footprint(r, bits) for r in resolved])
    w = np.array([r.weight for r in resolved], dtype=np.float64)
    estimates = _footprint_estimates(stacked, doc_footprints, bits)
    return np.einsum("g,gml->lm", w, estimates)


def similarity_rows(
    resolved_terms: Sequence[Sequence[ResolvedGroup]],
    doc: DocumentRecord,
    mode: str,
    bits: int = 0,
) -> np.ndarray:
    """Similarity rows (n, L', m) of every resolved query term against a doc.

    The pre-kernel quantity: trainers cache these so kernel parameters can
    move without touching the stores again. In LSH mode a skip-gram group
    shared by two query terms is hammed against the document only once.
    """
    if mode != "lsh":
        rows = []
        for resolved in resolved_terms:
            assert doc.term_vectors is not None
            rows.append(_similarity_rows_full(resolved, doc.term_vectors))
        return np.stack(rows)

    assert doc.term_footprints is not None
    slot_of: dict[tuple[str, int], int] = {}
    footprints: list[np.ndarray] = []
    term_slots = []
    for resolved in resolved_terms:
        slots = []
        for r in resolved:
            key = (r.group.id, r.member)
            slot = slot_of.get(key)
            if slot is None:
                slot = len(footprints)
                slot_of[key] = slot
                footprints.append(_group_footprint(r, bits))
            slots.append(slot)
        weights = np.array([r.weight for r in resolved], dtype=np.float64)
        term_slots.append((np.array(slots), weights))

    estimates = _footprint_estimates(np.stack(footprints), doc.term_footprints, bits)
    n_layers, m = estimates.shape[2], estimates.shape[1]
    # Written element-wise into a fresh buffer: the einsum output is a
    # transposed view, and pooling wants the m axis contiguous.
    out = np.empty((len(term_slots), n_layers, m))
    for i, (slots, w) in enumerate(term_slots):
        out[i] = np.einsum("g,gml->lm", w, estimates[slots])
    return out


def deep_features_resolved(
    resolved_terms: Sequence[Sequence[ResolvedGroup]],
    doc: DocumentRecord,
    kernels: KernelBank,
    mode: str,
    bits: int = 0,
    return_sims: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Kernel-pooled grid, shape (n, K, L'), from pre-resolved query terms."""
    sims = similarity_rows(resolved_terms, doc, mode, bits)  # (n, L', m)
    grid = kernel_pool_grid(sims, kernels).transpose(0, 2, 1)  # (n, K, L')
    if return_sims:
        return grid, sims
    return grid


def deep_features(
    terms: Sequence[QueryTerm],
    doc: DocumentRecord,
    group_set: TokenGroupSet,
    lookup: GroupLookup,
    kernels: KernelBank,
    mode: str,
    bits: int = 0,
) -> np.ndarray:
    """Per-term pooled feature grid (n, K, L') for one query/document pair."""
    resolved = [resolve_term_groups(t, group_set, lookup) for t in terms]
    result = deep_features_resolved(resolved, doc, kernels, mode, bits)
    assert isinstance(result, np.ndarray)
    return result


# ----------------------------------------------------------------------------
# score breakdowns
# ----------------------------------------------------------------------------


@dataclass
class ScoreBreakdown:
    doc_id: str
    total: float
    deep: float
    lexical: float
    others: float
    deep_per_term: list[float]
    lexical_contributions: dict[str, float]
    other_contributions: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "total": self.total,
            "components": {
                "deep": self.deep,
                "lexical": self.lexical,
                "others": self.others,
            },
            "deep_per_term": list(self.deep_per_term),
            "lexical_contributions": dict(self.lexical_contributions),
            "other_contributions": dict(self.other_contributions),
        }


@dataclass
class QueryPlan:
    """One query's reusable scoring state: terms and their resolved groups."""

    terms: list[QueryTerm]
    group_set: TokenGroupSet
    resolved: list[list[ResolvedGroup]]


@dataclass
class RankedDoc:
    doc_id: str
    score: float
    rank: int


@dataclass
class RerankResult:
    ranking: list[RankedDoc]
    failures: list[tuple[str, str]] = field(default_factory=list)

    def trec_lines(self, qid: str, tag: str = "becr") -> list[str]:
        return [
            f"{qid} Q0 {d.doc_id} {d.rank} {d.score:.6f} {tag}" for d in self.ranking
        ]


@dataclass
class TermDiff:
    term: str
    deep: float
    lexical: float


@dataclass
class PairExplanation:
    """Score difference of two candidates, split the way the score adds up."""

    doc_a: str
    doc_b: str
    total: float
    components: dict[str, float]
    per_term: list[TermDiff]
    lexical_features: dict[str, float]
    other_features: dict[str, float]
    breakdown_a: ScoreBreakdown
    breakdown_b: ScoreBreakdown

    def as_dict(self) -> dict:
        return {
            "doc_a": self.doc_a,
            "doc_b": self.doc_b,
            "total_diff": self.total,
            "component_diffs": dict(self.components),
            "per_term_diffs": [
                {"term": t.term, "deep": t.deep, "lexical": t.lexical} for t in self.per_term
            ],
            "lexical_feature_diffs": dict(self.lexical_features),
            "other_feature_diffs": dict(self.other_features),
            "breakdowns": {
                "a": self.breakdown_a.as_dict(),
                "b": self.breakdown_b.as_dict(),
            },
        }

    def as_text(self) -> str:
        lines = [
            f"score(A={self.doc_a}) - score(B={self.doc_b}) = {self.total:+.6f}",
            "",
            "component            diff",
        ]
        for name in COMPONENTS:
            lines.append(f"  {name:<18} {self.components[name]:+.6f}")
        lines.append("")
        lines.append("term                 deep       lexical")
        for t in self.per_term:
            lines.append(f"  {t.term:<18} {t.deep:+.6f}  {t.lexical:+.6f}")
        named = [(k, v) for k, v in self.other_features.items() if v != 0.0]
        if named:
            lines.append("")
            lines.append("other feature        diff")
            for name, value in named:
                lines.append(f"  {name:<18} {value:+.6f}")
        return "\n".join(lines)


class Scorer:
    """Binds weights, stores, and corpus statistics into a scoring pipeline."""

    def __init__(
        self,
        weights: ModelWeights,
        doc_store: DocStore,
        token_store: TokenStore,
        corpus_stats: CorpusStats,
        compose_config: ComposeConfig | None = None,
    ):
        require_compatible(doc_store.config, token_store.config)
        config = doc_store.config
        if weights.n_layers != config.n_layers:
            raise ValueError(
                f"weights sized for L'={weights.n_layers} but stores carry "
                f"{config.n_layers} layers"
            )
        if weights.dim != config.dim:
            raise ValueError(
                f"cls projection sized for p={weights.dim} but stores carry p={config.dim}"
            )
        self.weights = weights
        self.doc_store = doc_store
        self.token_store = token_store
        self.corpus_stats = corpus_stats
        self.compose_config = compose_config if compose_config is not None else ComposeConfig()
        self.mode = config.mode
        self.bits = config.bits

    # -- planning ------------------------------------------------------------

    def plan(self, query: str | Sequence[QueryTerm]) -> QueryPlan:
        terms = tokenize(query) if isinstance(query, str) else list(query)
        group_set = decompose_config(terms, self.compose_config)
        resolved = [
            resolve_term_groups(t, group_set, self.token_store.fetch) for t in terms
        ]
        return QueryPlan(terms=terms, group_set=group_set, resolved=resolved)

    # -- scoring -------------------------------------------------------------

    def score_record(self, plan: QueryPlan, record: DocumentRecord) -> ScoreBreakdown:
        w = self.weights
        grid = deep_features_resolved(
            plan.resolved, record, w.kernels, self.mode, self.bits
        )
        assert isinstance(grid, np.ndarray)
        n = grid.shape[0]
        per_term = np.einsum("kl,nkl->n", w.alpha, grid) + w.bias_deep / n
        deep = float(per_term.sum())

        features = assemble_lexical_features(
            [t.text for t in plan.terms], record.field_stats, self.corpus_stats, w.schema
        )
        contributions = w.beta * features
        lexical = float(contributions.sum() + w.bias_lexical)
        lexical_detail = dict(zip(w.schema.feature_names(), contributions.tolist()))

        other_detail = {
            CLS_FEATURE: float(w.cls_projection @ record.cls_vector.astype(np.float64))
        }
        for name, weight in w.gamma.items():
            other_detail[name] = weight * record.other_features.get(name, 0.0)
        others = float(sum(other_detail.values()) + w.bias_others)

        total = deep + lexical + others
        return ScoreBreakdown(
            doc_id=record.doc_id,
            total=total,
            deep=deep,
            lexical=lexical,
            others=others,
            deep_per_term=per_term.tolist(),
            lexical_contributions=lexical_detail,
            other_contributions=other_detail,
        )

    def score(self, query: str | Sequence[QueryTerm], doc_id: str) -> ScoreBreakdown:
        plan = self.plan(query)
        return self.score_record(plan, self.doc_store.fetch(doc_id))

    # -- ranking -------------------------------------------------------------

    def rerank(
        self,
        query: str | Sequence[QueryTerm],
        candidates: Sequence[str],
        top_k: int | None = None,
        threads: int | None = None,
    ) -> RerankResult:
        plan = self.plan(query)
        workers = thread_count(threads)

        def score_one(doc_id: str) -> tuple[str, float | None, str | None]:
            try:
                record = self.doc_store.fetch(doc_id)
                breakdown = self.score_record(plan, record)
                return doc_id, breakdown.total, None
            except (DocumentNotFoundError, SchemaMismatchError) as exc:
                return doc_id, None, f"{type(exc).__name__}: {exc}"

        if workers > 1 and len(candidates) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(score_one, candidates))
        else:
            outcomes = [score_one(c) for c in candidates]

        scored = [(d, s) for d, s, err in outcomes if err is None]
        failures = [(d, err) for d, s, err in outcomes if err is not None]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        if top_k is not None:
            scored = scored[:top_k]
        ranking = [
            RankedDoc(doc_id=d, score=s, rank=i + 1) for i, (d, s) in enumerate(scored)
        ]
        return RerankResult(ranking=ranking, failures=failures)

    # -- explanation ---------------------------------------------------------

    def _term_lexical_scores(self, plan: QueryPlan, record: DocumentRecord) -> list[float]:
        """Single-term lexical evaluations; proximity needs pairs so it stays
        in the component total rather than any per-term row."""
        w = self.weights
        out = []
        for term in plan.terms:
            features = assemble_lexical_features(
                [term.text], record.field_stats, self.corpus_stats, w.schema
            )
            out.append(float(w.beta @ features))
        return out

    def explain_pair(
        self, query: str | Sequence[QueryTerm], doc_a: str, doc_b: str
    ) -> PairExplanation:
        plan = self.plan(query)
        record_a = self.doc_store.fetch(doc_a)
        record_b = self.doc_store.fetch(doc_b)
        a = self.score_record(plan, record_a)
        b = self.score_record(plan, record_b)
        lex_a = self._term_lexical_scores(plan, record_a)
        lex_b = self._term_lexical_scores(plan, record_b)
        per_term = [
            TermDiff(term=t.text, deep=da - db, lexical=la - lb)
            for t, da, db, la, lb in zip(
                plan.terms, a.deep_per_term, b.deep_per_term, lex_a, lex_b
            )
        ]
        lex_feature_diffs = {
            name: a.lexical_contributions[name] - b.lexical_contributions[name]
            for name in a.lexical_contributions
        }
        other_diffs = {
            name: a.other_contributions[name] - b.other_contributions[name]
            for name in a.other_contributions
        }
        return PairExplanation(
            doc_a=doc_a,
            doc_b=doc_b,
            total=a.total - b.total,
            components={
                COMPONENT_DEEP: a.deep - b.deep,
                COMPONENT_LEXICAL: a.lexical - b.lexical,
                COMPONENT_OTHERS: a.others - b.others,
            },
            per_term=per_term,
            lexical_features=lex_feature_diffs,
            other_features=other_diffs,
            breakdown_a=a,
            breakdown_b=b,
        )
