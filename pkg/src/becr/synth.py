"""Deterministic synthetic corpora with plantable relevance signal.

These builders fabricate encoder exports directly: each token gets a unit
direction per layer, relevant documents carry query-term positions whose
vectors lean toward those directions, and graded labels are mirrored into the
body text (lexical signal) and a pagerank scalar (others signal). Everything
is a pure function of the seed, so tests and benchmarks can regenerate
identical instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from becr.compose import decompose, tokenize
from becr.lexical import CorpusStats, build_corpus_stats
from becr.stores import EncoderExport, ExportDocument, ExportGroup, ExportPiece

QUERY_WORDS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _token_groups(group_set, token_dirs, n_layers, dim, pair_noise, rng):
    """Group vectors: unigrams use the token direction; pair members tilt away
    by about pair_noise radians. Tight alignment keeps the composed embedding
    near unit norm, matching how contextual variants of one token behave."""
    groups = []
    for group in group_set.groups:
        member_vecs = np.empty((len(group.terms), n_layers, dim), dtype=np.float32)
        for gi, term in enumerate(group.terms):
            for layer in range(n_layers):
                base = token_dirs[(term.text, layer)]
                if len(group.terms) > 1:
                    base = _unit(base + pair_noise * _unit(rng.standard_normal(dim)))
                member_vecs[gi, layer] = base
        groups.append(ExportGroup(group_id=group.id, vectors=member_vecs))
    return groups


@dataclass
class SyntheticInstance:
    export: EncoderExport
    query: str
    doc_ids: list[str]
    grades: dict[str, int]
    window: int
    signal: float
    pair_noise: float = 0.1
    extras: dict = field(default_factory=dict)

    def corpus_stats(self, pair_window: int | None = None) -> CorpusStats:
        return build_corpus_stats(
            (doc.fields for doc in self.export.documents), pair_window=pair_window
        )


def make_instance(
    seed: int,
    *,
    dim: int = 16,
    layer_ids: tuple[int, ...] = (0, 1),
    n_docs: int = 8,
    doc_len: int = 16,
    q_len: int = 3,
    window: int = 3,
    signal: float = 0.85,
    pair_noise: float = 0.1,
    filler_vocab: int = 30,
    grades: list[int] | None = None,
    pieces: int = 2,
) -> SyntheticInstance:
    """Planted-relevance instance.

    Grade-g documents carry each query term g times in the body (with term
    vectors leaning `signal` of the way toward the token direction), query
    terms in the title when g >= 2, and pagerank equal to g. Grade-0
    documents are pure filler.
    """
    if q_len > len(QUERY_WORDS):
        raise ValueError(f"q_len at most {len(QUERY_WORDS)}")
    rng = np.random.default_rng(seed)
    n_layers = len(layer_ids)
    query = " ".join(QUERY_WORDS[:q_len])
    terms = tokenize(query)
    group_set = decompose(terms, window)

    token_dirs: dict[tuple[str, int], np.ndarray] = {}
    for text in sorted({t.text for t in terms}):
        for layer in range(n_layers):
            token_dirs[(text, layer)] = _unit(rng.standard_normal(dim))

    groups = _token_groups(group_set, token_dirs, n_layers, dim, pair_noise, rng)

    if grades is None:
        grades = [(n_docs - 1 - i) % 4 for i in range(n_docs)]
    if len(grades) != n_docs:
        raise ValueError("grades must have one entry per document")

    documents = []
    doc_ids = []
    grade_map = {}
    query_tokens = [t.text for t in terms]
    for i in range(n_docs):
        doc_id = f"d{i:03d}"
        grade = int(grades[i])
        body = [f"filler{int(k)}" for k in rng.integers(0, filler_vocab, size=doc_len)]
        planted = min(grade * q_len, doc_len // 2)
        slots = rng.choice(doc_len, size=planted, replace=False) if planted else []
        for j, slot in enumerate(sorted(int(s) for s in slots)):
            body[slot] = query_tokens[j % q_len]

        vectors = rng.standard_normal((doc_len, n_layers, dim))
        vectors /= np.linalg.norm(vectors, axis=2, keepdims=True)
        for pos, token in enumerate(body):
            if (token, 0) not in token_dirs:
                continue
            for layer in range(n_layers):
                lean = signal * token_dirs[(token, layer)]
                vectors[pos, layer] = _unit(
                    lean + (1.0 - signal) * rng.standard_normal(dim)
                )
        vectors = vectors.astype(np.float32)

        if grade >= 2:
            title = query_tokens + [f"filler{int(rng.integers(0, filler_vocab))}"]
        else:
            title = [f"filler{int(k)}" for k in rng.integers(0, filler_vocab, size=2)]

        bounds = np.linspace(0, doc_len, pieces + 1).astype(int)
        piece_list = [
            ExportPiece(
                term_vectors=vectors[a:b],
                cls_vector=rng.standard_normal(dim).astype(np.float32) + grade,
            )
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        documents.append(
            ExportDocument(
                doc_id=doc_id,
                pieces=piece_list,
                fields={"title": title, "body": body},
                features={"pagerank": float(grade)},
            )
        )
        doc_ids.append(doc_id)
        grade_map[doc_id] = grade

    export = EncoderExport(
        dim=dim, layer_ids=layer_ids, documents=documents, groups=groups
    )
    return SyntheticInstance(
        export=export,
        query=query,
        doc_ids=doc_ids,
        grades=grade_map,
        window=window,
        signal=signal,
        pair_noise=pair_noise,
    )


def make_fidelity_instance(
    seed: int,
    *,
    n_docs: int = 20,
    doc_len: int = 4000,
    q_len: int = 5,
    dim: int = 32,
    layer_ids: tuple[int, ...] = (0, 1),
    window: int = 3,
) -> SyntheticInstance:
    """Instance whose similarity densities are smooth and fully covered.

    A pooled kernel feature is the log of the local density of the
    document-term similarity multiset near mu, so full-vs-LSH feature
    comparison is only meaningful where that density is well behaved. Two
    failure modes of careless fixtures: a kernel with little support amplifies
    estimator noise by (mu - c)/sigma^2 through whichever outliers drift in,
    and wherever the density's log-slope exceeds the reciprocal of the local
    estimator noise, noise systematically widens the profile and inflates the
    log-sum on the sparse side. Long real documents exhibit neither; their
    similarity rows are dense and smooth. This fixture reproduces that regime.

    Query-term directions are orthonormal per layer, so cosines are set
    directly. Each position's cosine against its owner term follows a flat
    density over (-1, 1) with a steep rise confined to |c| > 0.93, where
    footprint noise vanishes like sin(theta) and edge kernels need the mass;
    owner cosines are laid down as quantiles of that density, so coverage is
    exact rather than sampled. Cosines against the other query terms are
    truncated-Laplace, chosen because its constant log-slope stays within the
    noise budget everywhere; any cross-term density with a compactly
    supported foot puts an unbounded log-slope at the foot, and estimator
    noise converts that into a one-sided bias at whichever kernel sits there.
    The residual is orthogonal to every term direction. Documents are
    separated by a doc-indexed linear tilt of the owner density, which moves
    every kernel feature a little and keeps rankings resolvable under noise.
    Lexical fields and pagerank carry the graded signal as in make_instance.
    """
    if q_len > len(QUERY_WORDS):
        raise ValueError(f"q_len at most {len(QUERY_WORDS)}")
    if dim < q_len:
        raise ValueError("dim must be at least q_len for orthonormal directions")
    rng = np.random.default_rng(seed)
    n_layers = len(layer_ids)
    query = " ".join(QUERY_WORDS[:q_len])
    terms = tokenize(query)
    group_set = decompose(terms, window)

    basis = np.empty((n_layers, q_len, dim))
    for layer in range(n_layers):
        q_mat, _ = np.linalg.qr(rng.standard_normal((dim, q_len)))
        basis[layer] = q_mat.T

    token_dirs: dict[tuple[str, int], np.ndarray] = {}
    query_tokens = [t.text for t in terms]
    for t, text in enumerate(query_tokens):
        for layer in range(n_layers):
            token_dirs[(text, layer)] = basis[layer, t]

    pair_noise = 0.05
    groups = _token_groups(group_set, token_dirs, n_layers, dim, pair_noise, rng)

    owner_col = np.arange(doc_len) % q_len
    rows_idx = np.arange(doc_len)
    cdf_grid = np.linspace(-0.995, 0.995, 4001)
    edge = np.clip((np.abs(cdf_grid) - 0.93) / 0.065, 0.0, None)
    profile = 1.0 + 8.0 * edge * edge
    documents = []
    doc_ids = []
    grade_map = {}
    for i in range(n_docs):
        doc_id = f"d{i:03d}"
        grade = (n_docs - 1 - i) % 4
        tilt = -0.7 + 1.4 * i / max(n_docs - 1, 1)
        pdf = profile * (1.0 + 0.8 * tilt * cdf_grid)
        cdf = np.cumsum(pdf)
        cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
        body = [f"filler{int(k)}" for k in rng.integers(0, 200, size=doc_len)]
        planted = min(grade * q_len, doc_len // 4)
        slots = rng.choice(doc_len, size=planted, replace=False) if planted else []
        for j, slot in enumerate(sorted(int(s) for s in slots)):
            body[slot] = query_tokens[j % q_len]

        vectors = np.empty((doc_len, n_layers, dim), dtype=np.float64)
        for layer in range(n_layers):
            sign = rng.uniform(-1.0, 1.0, size=(doc_len, q_len))
            lam = -0.26 * np.sign(sign) * np.log1p(
                -np.abs(sign) * (1.0 - np.exp(-0.9 / 0.26))
            )
            for t in range(q_len):
                rows = np.arange(t, doc_len, q_len)
                quantiles = (np.arange(rows.size) + 0.5) / rows.size
                vals = np.interp(quantiles, cdf, cdf_grid)
                vals += rng.uniform(-0.003, 0.003, size=rows.size)
                lam[rows, t] = rng.permutation(np.clip(vals, -0.996, 0.996))
            own = lam[rows_idx, owner_col]
            others_sq = np.sum(lam * lam, axis=1) - own * own
            headroom = np.maximum(0.998 - own * own, 0.0)
            shrink = np.ones(doc_len)
            over = others_sq > headroom
            shrink[over] = np.sqrt(headroom[over] / others_sq[over])
            lam *= shrink[:, None]
            lam[rows_idx, owner_col] = own

            u_mat = basis[layer]
            noise = rng.standard_normal((doc_len, dim))
            noise -= (noise @ u_mat.T) @ u_mat
            noise /= np.linalg.norm(noise, axis=1, keepdims=True)
            resid = np.sqrt(np.maximum(1.0 - np.sum(lam * lam, axis=1), 0.0))
            vectors[:, layer, :] = lam @ u_mat + noise * resid[:, None]
        vectors = (
            vectors / np.linalg.norm(vectors, axis=2, keepdims=True)
        ).astype(np.float32)

        if grade >= 2:
            title = query_tokens + [f"filler{int(rng.integers(0, 200))}"]
        else:
            title = [f"filler{int(k)}" for k in rng.integers(0, 200, size=2)]

        half = doc_len // 2
        piece_list = [
            ExportPiece(
                term_vectors=vectors[:half],
                cls_vector=rng.standard_normal(dim).astype(np.float32) + grade,
            ),
            ExportPiece(
                term_vectors=vectors[half:],
                cls_vector=rng.standard_normal(dim).astype(np.float32) + grade,
            ),
        ]
        documents.append(
            ExportDocument(
                doc_id=doc_id,
                pieces=piece_list,
                fields={"title": title, "body": body},
                features={"pagerank": float(grade)},
            )
        )
        doc_ids.append(doc_id)
        grade_map[doc_id] = grade

    export = EncoderExport(dim=dim, layer_ids=layer_ids, documents=documents, groups=groups)
    return SyntheticInstance(
        export=export,
        query=query,
        doc_ids=doc_ids,
        grades=grade_map,
        window=window,
        signal=1.0,
        pair_noise=pair_noise,
    )


def make_bench_instance(
    seed: int,
    *,
    n_docs: int = 150,
    doc_len: int = 857,
    q_len: int = 5,
    dim: int = 32,
    layer_ids: tuple[int, ...] = (0, 1, 2, 3, 12),
    window: int = 3,
) -> SyntheticInstance:
    """Timing-scale instance: long unplanted documents, light lexical fields.

    Vector content is irrelevant to footprint arithmetic cost, so documents
    are random; a thin grade cycle keeps ranking output non-degenerate.
    """
    return make_instance(
        seed,
        dim=dim,
        layer_ids=layer_ids,
        n_docs=n_docs,
        doc_len=doc_len,
        q_len=q_len,
        window=window,
        signal=0.7,
        filler_vocab=500,
        pieces=3,
    )
