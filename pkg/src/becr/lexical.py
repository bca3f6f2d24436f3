"""Classical term-matching features over title and body fields.

Per-field document statistics (token positions and lengths) plus corpus-level
document frequencies feed three feature families: tf*idf, Robertson BM25, and
squared-reciprocal minimum pair distance. Each family is aggregated over the
distinct query terms (or term pairs for proximity) as max/min/avg/sum, in a
fixed schema-determined order so a weight vector can be zipped against it.

Title features are schema-gated: passage-style corpora have no title field and
drop the title and title+body columns entirely. BM25 over query-word pairs
(co-occurrence counts within a window) is supported but off by default; the
default schema carries no pair columns.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

STATS_MAGIC = b"BECRST01"
STATS_VERSION = 1

BM25_K1_DEFAULT = 1.2
BM25_B_DEFAULT = 0.75


class SchemaMismatchError(ValueError):
    """Document stats, corpus stats, or weights disagree with the feature schema."""


@dataclass
class FieldStats:
    """Token positions and length for one document field."""

    field: str
    length: int
    positions: dict[str, list[int]]

    @classmethod
    def from_tokens(cls, field_name: str, tokens: Sequence[str]) -> "FieldStats":
        positions: dict[str, list[int]] = {}
        for i, tok in enumerate(tokens):
            positions.setdefault(tok, []).append(i)
        return cls(field=field_name, length=len(tokens), positions=positions)

    def tf(self, term: str) -> int:
        return len(self.positions.get(term, ()))


@dataclass
class CorpusStats:
    """Document counts, per-field average lengths, and document frequencies."""

    doc_count: int
    avg_len: dict[str, float]
    df: dict[str, dict[str, int]]
    pair_df: dict[str, dict[tuple[str, str], int]] | None = None
    pair_window: int | None = None

    def df_of(self, field_name: str, term: str) -> int:
        return self.df.get(field_name, {}).get(term, 0)

    def avg(self, field_name: str) -> float:
        try:
            return self.avg_len[field_name]
        except KeyError:
            raise SchemaMismatchError(f"corpus stats carry no field {field_name!r}") from None


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def _cooccurrences(pos_a: Sequence[int], pos_b: Sequence[int], window: int) -> int:
    """Number of position pairs within `window`, by sorted-list sweep."""
    count = 0
    j_lo = 0
    for pa in pos_a:
        while j_lo < len(pos_b) and pos_b[j_lo] < pa - window:
            j_lo += 1
        j = j_lo
        while j < len(pos_b) and pos_b[j] <= pa + window:
            count += 1
            j += 1
    return count


def build_corpus_stats(
    docs_fields: Iterable[Mapping[str, Sequence[str]]],
    pair_window: int | None = None,
) -> CorpusStats:
    """Single pass over tokenized documents.

    `docs_fields` yields one field->tokens mapping per document. When
    `pair_window` is given, pair document frequencies (both words co-occurring
    within the window) are collected too, enabling the pair-BM25 schema.
    """
    doc_count = 0
    totals: dict[str, int] = {}
    field_docs: dict[str, int] = {}
    df: dict[str, dict[str, int]] = {}
    pair_df: dict[str, dict[tuple[str, str], int]] | None = (
        {} if pair_window is not None else None
    )

    for fields in docs_fields:
        doc_count += 1
        for name, tokens in fields.items():
            totals[name] = totals.get(name, 0) + len(tokens)
            field_docs[name] = field_docs.get(name, 0) + 1
            seen = set(tokens)
            bucket = df.setdefault(name, {})
            for term in seen:
                bucket[term] = bucket.get(term, 0) + 1
            if pair_df is not None:
                stats = FieldStats.from_tokens(name, tokens)
                pair_bucket = pair_df.setdefault(name, {})
                for a, b in itertools.combinations(sorted(seen), 2):
                    if _cooccurrences(stats.positions[a], stats.positions[b], pair_window) > 0:
                        key = _pair_key(a, b)
                        pair_bucket[key] = pair_bucket.get(key, 0) + 1

    avg_len = {name: totals[name] / field_docs[name] for name in totals}
    return CorpusStats(
        doc_count=doc_count,
        avg_len=avg_len,
        df=df,
        pair_df=pair_df,
        pair_window=pair_window,
    )


# ----------------------------------------------------------------------------
# per-term metrics
# ----------------------------------------------------------------------------


def bm25(
    term: str,
    field_stats: FieldStats,
    corpus_stats: CorpusStats,
    k1: float = BM25_K1_DEFAULT,
    b_param: float = BM25_B_DEFAULT,
) -> float:
    """Robertson BM25 with the +1-smoothed idf; 0 for an absent term."""
    tf = field_stats.tf(term)
    if tf == 0:
        return 0.0
    n = corpus_stats.doc_count
    df = corpus_stats.df_of(field_stats.field, term)
    idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
    norm = 1.0 - b_param + b_param * field_stats.length / corpus_stats.avg(field_stats.field)
    return idf * tf * (k1 + 1.0) / (tf + k1 * norm)


def tfidf(term: str, field_stats: FieldStats, corpus_stats: CorpusStats) -> float:
    """tf * ln(N/df); 0 for an absent term."""
    tf = field_stats.tf(term)
    if tf == 0:
        return 0.0
    df = corpus_stats.df_of(field_stats.field, term)
    if df <= 0:
        return 0.0
    return tf * math.log(corpus_stats.doc_count / df)


def _min_distance(pos_a: Sequence[int], pos_b: Sequence[int]) -> int:
    """Smallest |pa - pb| between two sorted position lists."""
    best = None
    i = j = 0
    while i < len(pos_a) and j < len(pos_b):
        d = abs(pos_a[i] - pos_b[j])
        if best is None or d < best:
            best = d
        if pos_a[i] < pos_b[j]:
            i += 1
        else:
            j += 1
    assert best is not None
    return best


def inv_min_dist_features(
    query_terms: Sequence[str], field_stats: FieldStats
) -> tuple[float, float, float]:
    """(max, min, avg) of 1/d^2 over distinct query-term pairs both present.

    d is the minimum occurrence distance of the pair. Duplicate query words
    form no pair with themselves. No contributing pair gives (0, 0, 0).
    """
    distinct = list(dict.fromkeys(query_terms))
    values = []
    for a, b in itertools.combinations(distinct, 2):
        pos_a = field_stats.positions.get(a)
        pos_b = field_stats.positions.get(b)
        if not pos_a or not pos_b:
            continue
        d = _min_distance(pos_a, pos_b)
        values.append(1.0 / (d * d))
    if not values:
        return (0.0, 0.0, 0.0)
    return (max(values), min(values), sum(values) / len(values))


def pair_bm25(
    term_a: str,
    term_b: str,
    field_stats: FieldStats,
    corpus_stats: CorpusStats,
    window: int,
    k1: float = BM25_K1_DEFAULT,
    b_param: float = BM25_B_DEFAULT,
) -> float:
    """BM25 over pair co-occurrence counts within `window`.

    Requires pair document frequencies in the corpus stats (built with a
    matching pair_window).
    """
    if corpus_stats.pair_df is None or corpus_stats.pair_window != window:
        raise SchemaMismatchError(
            "pair BM25 needs corpus stats built with the same pair_window"
        )
    pos_a = field_stats.positions.get(term_a)
    pos_b = field_stats.positions.get(term_b)
    if not pos_a or not pos_b:
        return 0.0
    tf = _cooccurrences(pos_a, pos_b, window)
    if tf == 0:
        return 0.0
    n = corpus_stats.doc_count
    df = corpus_stats.pair_df.get(field_stats.field, {}).get(_pair_key(term_a, term_b), 0)
    idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
    norm = 1.0 - b_param + b_param * field_stats.length / corpus_stats.avg(field_stats.field)
    return idf * tf * (k1 + 1.0) / (tf + k1 * norm)


# ----------------------------------------------------------------------------
# schema and assembly
# ----------------------------------------------------------------------------

AGGS = ("max", "min", "avg", "sum")


@dataclass(frozen=True)
class FeatureSchema:
    """Which lexical columns exist and in what order.

    The web default carries title, body, and combined-sum columns; the passage
    variant keeps body only. k1/b ride along so feature values are a pure
    function of (schema, doc, corpus).
    """

    include_title: bool = True
    pair_bm25: bool = False
    pair_window: int = 8
    k1: float = BM25_K1_DEFAULT
    b_param: float = BM25_B_DEFAULT

    @property
    def fields(self) -> tuple[str, ...]:
        return ("title", "body") if self.include_title else ("body",)

    def feature_names(self) -> list[str]:
        names: list[str] = []
        for metric in ("tfidf", "bm25"):
            for fld in self.fields:
                names.extend(f"{metric}_{fld}_{agg}" for agg in AGGS)
            if self.include_title:
                names.append(f"{metric}_title_body_sum")
        for fld in self.fields:
            names.extend(f"inv_min_dist_{fld}_{agg}" for agg in ("max", "min", "avg"))
        if self.pair_bm25:
            for fld in self.fields:
                names.extend(f"pair_bm25_{fld}_{agg}" for agg in AGGS)
        return names

    @property
    def size(self) -> int:
        return len(self.feature_names())

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "FeatureSchema":
        if name == "web":
            return cls(include_title=True, **kwargs)
        if name == "passage":
            return cls(include_title=False, **kwargs)
        raise ValueError(f"unknown schema {name!r} (expected 'web' or 'passage')")

    @property
    def name(self) -> str:
        return "web" if self.include_title else "passage"


def _aggregate(values: Sequence[float]) -> dict[str, float]:
    return {
        "max": max(values),
        "min": min(values),
        "avg": sum(values) / len(values),
        "sum": sum(values),
    }


def lexical_feature_map(
    query_terms: Sequence[str],
    field_stats_by_name: Mapping[str, FieldStats],
    corpus_stats: CorpusStats,
    schema: FeatureSchema,
) -> dict[str, float]:
    """Named Appendix-style feature values for one (query, document) pair.

    tf-based families aggregate over all distinct query terms, absent terms
    contributing 0, so sum == avg * term count holds. Proximity aggregates
    over contributing pairs only.
    """
    distinct = list(dict.fromkeys(query_terms))
    if not distinct:
        raise ValueError("empty query")
    for fld in schema.fields:
        if fld not in field_stats_by_name:
            raise SchemaMismatchError(
                f"schema {schema.name!r} needs field {fld!r}, document has "
                f"{sorted(field_stats_by_name)}"
            )

    out: dict[str, float] = {}
    metric_fns = {
        "tfidf": lambda t, fs: tfidf(t, fs, corpus_stats),
        "bm25": lambda t, fs: bm25(t, fs, corpus_stats, schema.k1, schema.b_param),
    }
    for metric, fn in metric_fns.items():
        per_field: dict[str, list[float]] = {}
        for fld in schema.fields:
            fs = field_stats_by_name[fld]
            values = [fn(t, fs) for t in distinct]
            per_field[fld] = values
            for agg, val in _aggregate(values).items():
                out[f"{metric}_{fld}_{agg}"] = val
        if schema.include_title:
            out[f"{metric}_title_body_sum"] = sum(per_field["title"]) + sum(per_field["body"])

    for fld in schema.fields:
        mx, mn, avg = inv_min_dist_features(distinct, field_stats_by_name[fld])
        out[f"inv_min_dist_{fld}_max"] = mx
        out[f"inv_min_dist_{fld}_min"] = mn
        out[f"inv_min_dist_{fld}_avg"] = avg

    if schema.pair_bm25:
        pairs = list(itertools.combinations(distinct, 2))
        for fld in schema.fields:
            fs = field_stats_by_name[fld]
            values = [
                pair_bm25(a, b, fs, corpus_stats, schema.pair_window, schema.k1, schema.b_param)
                for a, b in pairs
            ] or [0.0]
            for agg, val in _aggregate(values).items():
                out[f"pair_bm25_{fld}_{agg}"] = val

    return out


def assemble_lexical_features(
    query_terms: Sequence[str],
    field_stats_by_name: Mapping[str, FieldStats],
    corpus_stats: CorpusStats,
    schema: FeatureSchema,
) -> np.ndarray:
    """Feature vector in schema order, float64."""
    table = lexical_feature_map(query_terms, field_stats_by_name, corpus_stats, schema)
    return np.array([table[name] for name in schema.feature_names()], dtype=np.float64)


# ----------------------------------------------------------------------------
# corpus stats file
# ----------------------------------------------------------------------------


def _write_str(out, s: str, width: str = "<H") -> None:
    raw = s.encode("utf-8")
    out.write(struct.pack(width, len(raw)))
    out.write(raw)


def _read_str(buf: memoryview, off: int, width: str = "<H") -> tuple[str, int]:
    size = struct.calcsize(width)
    (n,) = struct.unpack_from(width, buf, off)
    off += size
    return bytes(buf[off : off + n]).decode("utf-8"), off + n


def save_corpus_stats(path: str | Path, stats: CorpusStats) -> None:
    with open(path, "wb") as out:
        out.write(STATS_MAGIC)
        out.write(struct.pack("<IQ", STATS_VERSION, stats.doc_count))
        out.write(struct.pack("<B", len(stats.avg_len)))
        for name in stats.avg_len:
            _write_str(out, name, "<B")
            out.write(struct.pack("<d", stats.avg_len[name]))
            terms = stats.df.get(name, {})
            out.write(struct.pack("<Q", len(terms)))
            for term in sorted(terms):
                _write_str(out, term)
                out.write(struct.pack("<I", terms[term]))
        has_pairs = stats.pair_df is not None
        out.write(struct.pack("<B", 1 if has_pairs else 0))
        if has_pairs:
            out.write(struct.pack("<I", stats.pair_window or 0))
            out.write(struct.pack("<B", len(stats.pair_df)))
            for name in stats.pair_df:
                _write_str(out, name, "<B")
                pairs = stats.pair_df[name]
                out.write(struct.pack("<Q", len(pairs)))
                for a, b in sorted(pairs):
                    _write_str(out, a)
                    _write_str(out, b)
                    out.write(struct.pack("<I", pairs[(a, b)]))


def load_corpus_stats(path: str | Path) -> CorpusStats:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:8]) != STATS_MAGIC:
        raise ValueError(f"{path} is not a corpus stats file (bad magic)")
    version, doc_count = struct.unpack_from("<IQ", buf, 8)
    if version != STATS_VERSION:
        raise ValueError(f"unsupported corpus stats version {version}")
    off = 8 + 12
    (n_fields,) = struct.unpack_from("<B", buf, off)
    off += 1
    avg_len: dict[str, float] = {}
    df: dict[str, dict[str, int]] = {}
    for _ in range(n_fields):
        name, off = _read_str(buf, off, "<B")
        (avg,) = struct.unpack_from("<d", buf, off)
        off += 8
        (n_terms,) = struct.unpack_from("<Q", buf, off)
        off += 8
        bucket: dict[str, int] = {}
        for _ in range(n_terms):
            term, off = _read_str(buf, off)
            (count,) = struct.unpack_from("<I", buf, off)
            off += 4
            bucket[term] = count
        avg_len[name] = avg
        df[name] = bucket
    (has_pairs,) = struct.unpack_from("<B", buf, off)
    off += 1
    pair_df = None
    pair_window = None
    if has_pairs:
        (pair_window,) = struct.unpack_from("<I", buf, off)
        off += 4
        (n_fields_p,) = struct.unpack_from("<B", buf, off)
        off += 1
        pair_df = {}
        for _ in range(n_fields_p):
            name, off = _read_str(buf, off, "<B")
            (n_pairs,) = struct.unpack_from("<Q", buf, off)
            off += 8
            bucket_p: dict[tuple[str, str], int] = {}
            for _ in range(n_pairs):
                a, off = _read_str(buf, off)
                b, off = _read_str(buf, off)
                (count,) = struct.unpack_from("<I", buf, off)
                off += 4
                bucket_p[(a, b)] = count
            pair_df[name] = bucket_p
    return CorpusStats(
        doc_count=doc_count,
        avg_len=avg_len,
        df=df,
        pair_df=pair_df,
        pair_window=pair_window,
    )
