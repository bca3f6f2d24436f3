"""Query decomposition into token groups and per-term embedding composition.

A query is decomposed into uni-grams plus ordered skip-gram pairs whose word
distance stays within a context window (default 3). Each group carries a
heuristic weight: 1/span for a pair, 1/(window+1) for a uni-gram, so tighter
pairs dominate and the bare uni-gram contributes least. At query time the
groups found in the token store are combined per query term, normalizing the
weights over exactly the found groups, either by summing stored vectors
(full-precision mode) or by combining SimHash cosine estimates (LSH mode).
Pairs missing from the store are simply skipped; only a term with no
resolvable group at all is an error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from becr.core import LshFootprint, cosine_from_hamming, hamming_words

# Joins the two member tokens of a pair group id. The unit-separator control
# character cannot appear in tokenized text, so ids stay collision-free.
PAIR_JOIN = "\x1f"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class MissingTermError(LookupError):
    """No token group for a query term could be resolved from the store."""


@dataclass(frozen=True)
class QueryTerm:
    """One normalized query token at a fixed 0-based position."""

    text: str
    position: int


@dataclass(frozen=True)
class TokenGroup:
    kind: str  # "unigram" or "pair"
    terms: tuple[QueryTerm, ...]
    span: int | None = None

    @property
    def id(self) -> str:
        """Store key: the token itself, or both pair members joined in query order."""
        return PAIR_JOIN.join(t.text for t in self.terms)

    def member_index(self, term: QueryTerm) -> int:
        return self.terms.index(term)

    def contains(self, term: QueryTerm) -> bool:
        return term in self.terms


@dataclass
class TokenGroupSet:
    groups: list[TokenGroup]
    window: int
    weights: dict[TokenGroup, float]

    def groups_containing(self, term: QueryTerm) -> list[TokenGroup]:
        return [g for g in self.groups if g.contains(term)]

    def ids(self) -> list[str]:
        return [g.id for g in self.groups]


@dataclass(frozen=True)
class ComposeConfig:
    """Decomposition variants: the defaults reproduce the full scheme."""

    window: int = 3
    use_unigrams: bool = True
    use_pairs: bool = True


@dataclass
class TokenGroupEmbedding:
    """Stored representation of one token group.

    One member for a uni-gram, two for a pair (query-order). Full-precision
    stores carry vectors (members, L, p); LSH stores carry word-packed
    footprints (members, L, b/64) plus the bit width.
    """

    vectors: np.ndarray | None = None
    footprints: np.ndarray | None = None
    bits: int | None = None

    @property
    def members(self) -> int:
        src = self.vectors if self.vectors is not None else self.footprints
        return 0 if src is None else src.shape[0]


GroupLookup = Callable[[str], "TokenGroupEmbedding | None"]


def tokenize(text: str) -> list[QueryTerm]:
    """Lowercase and split on non-word characters; no stemming.

    This is the store-build contract: token store keys and document term
    positions must come through the same normalization.
    """
    return [QueryTerm(text=tok, position=i) for i, tok in enumerate(_TOKEN_RE.findall(text.lower()))]


def tokenize_plain(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def group_weight(group: TokenGroup, window: int) -> float:
    if group.kind == "pair":
        if not group.span or group.span < 1:
            raise ValueError(f"pair group must have span >= 1, got {group.span}")
        return 1.0 / group.span
    return 1.0 / (window + 1)


def decompose(
    terms: Sequence[QueryTerm],
    window: int = 3,
    *,
    use_unigrams: bool = True,
    use_pairs: bool = True,
) -> TokenGroupSet:
    """All uni-grams plus ordered pairs (a, b), a < b, with b - a <= window.

    The variant flags drop a whole group family, matching the ablation
    configurations (pairs only, uni-grams only). Window 0 degenerates to
    uni-grams only.
    """
    if len(terms) == 0:
        raise ValueError("cannot decompose an empty query")
    if window < 0:
        raise ValueError(f"window must be >= 0, got {window}")

    groups: list[TokenGroup] = []
    if use_unigrams:
        for t in terms:
            groups.append(TokenGroup(kind="unigram", terms=(t,)))
    if use_pairs:
        for i, a in enumerate(terms):
            for b in terms[i + 1 :]:
                span = b.position - a.position
                if 1 <= span <= window:
                    groups.append(TokenGroup(kind="pair", terms=(a, b), span=span))

    weights = {g: group_weight(g, window) for g in groups}
    return TokenGroupSet(groups=groups, window=window, weights=weights)


def decompose_config(terms: Sequence[QueryTerm], config: ComposeConfig) -> TokenGroupSet:
    return decompose(
        terms,
        config.window,
        use_unigrams=config.use_unigrams,
        use_pairs=config.use_pairs,
    )


# ----------------------------------------------------------------------------
# composition
# ----------------------------------------------------------------------------


@dataclass
class ResolvedGroup:
    group: TokenGroup
    member: int
    embedding: TokenGroupEmbedding
    weight: float  # normalized over the found groups of this term


def resolve_term_groups(
    term: QueryTerm, group_set: TokenGroupSet, lookup: GroupLookup
) -> list[ResolvedGroup]:
    """Found groups containing `term`, weights renormalized to sum to 1.

    The L1 normalizer runs over exactly the groups that both contain the term
    and resolve through the lookup; a missing pair shrinks the normalizer
    instead of leaving probability mass unaccounted for.
    """
    found: list[tuple[TokenGroup, TokenGroupEmbedding]] = []
    for g in group_set.groups_containing(term):
        emb = lookup(g.id)
        if emb is not None:
            found.append((g, emb))
    if not found:
        raise MissingTermError(f"no token group resolvable for query term {term.text!r}")
    total = sum(group_set.weights[g] for g, _ in found)
    return [
        ResolvedGroup(
            group=g,
            member=g.member_index(term),
            embedding=emb,
            weight=group_set.weights[g] / total,
        )
        for g, emb in found
    ]


def compose_resolved(resolved: Sequence[ResolvedGroup]) -> np.ndarray:
    """Weighted sum of already-resolved member vectors, shape (L, p) float64."""
    out: np.ndarray | None = None
    for r in resolved:
        if r.embedding.vectors is None:
            raise ValueError(
                f"group {r.group.id!r} holds no full-precision vectors; "
                "composition in full mode needs a full-precision token store"
            )
        contrib = r.weight * r.embedding.vectors[r.member].astype(np.float64)
        out = contrib if out is None else out + contrib
    assert out is not None
    return out


def compose_term_embedding(
    term: QueryTerm, group_set: TokenGroupSet, lookup: GroupLookup
) -> np.ndarray:
    """Per-layer composed query-term embedding, shape (L, p).

    E(q_i) = sum over found groups t of (w_t / ||w||_1) * e_l(q_i^t), where a
    pair group contributes the member vector matching the term's slot.
    """
    return compose_resolved(resolve_term_groups(term, group_set, lookup))


def composed_similarity_lsh(
    term: QueryTerm,
    group_set: TokenGroupSet,
    lookup: GroupLookup,
    doc_term_fp: LshFootprint,
    layer: int,
) -> float:
    """Weighted combination of SimHash estimates against one document term.

    Uses the same normalized weights as full-precision composition, applied to
    cosine_estimate(group footprint, doc footprint) at the given layer.
    """
    resolved = resolve_term_groups(term, group_set, lookup)
    acc = 0.0
    for r in resolved:
        if r.embedding.footprints is None or r.embedding.bits is None:
            raise ValueError(f"group {r.group.id!r} holds no LSH footprints")
        if r.embedding.bits != doc_term_fp.bits:
            raise ValueError(
                f"mixed LSH configurations: group {r.group.id!r} has "
                f"{r.embedding.bits} bits, document term has {doc_term_fp.bits}"
            )
        h = hamming_words(r.embedding.footprints[r.member, layer], doc_term_fp.words)
        acc += r.weight * float(cosine_from_hamming(h, doc_term_fp.bits))
    return acc


# ----------------------------------------------------------------------------
# query file format
# ----------------------------------------------------------------------------


def read_query_file(path: str | Path) -> dict[str, str]:
    """Parse "qid<TAB>query text" lines into an ordered qid -> text map."""
    queries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'qid<TAB>query text', got {line!r}")
        qid, text = line.split("\t", 1)
        queries[qid] = text
    return queries


def write_query_file(path: str | Path, queries: dict[str, str]) -> None:
    lines = [f"{qid}\t{text}" for qid, text in queries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
