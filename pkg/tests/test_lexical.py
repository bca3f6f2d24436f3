"""Lexical feature family behavior, checked against straight-line oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from becr.lexical import (
    CorpusStats,
    FeatureSchema,
    FieldStats,
    SchemaMismatchError,
    assemble_lexical_features,
    bm25,
    build_corpus_stats,
    inv_min_dist_features,
    lexical_feature_map,
    load_corpus_stats,
    pair_bm25,
    save_corpus_stats,
    tfidf,
)


def stats_for(tokens, field="body"):
    return FieldStats.from_tokens(field, tokens)


def corpus_of(*docs, field="body", pair_window=None):
    return build_corpus_stats([{field: list(d)} for d in docs], pair_window=pair_window)


# ---------------------------------------------------------------------------
# bm25 / tfidf
# ---------------------------------------------------------------------------


def test_bm25_zero_for_absent_term():
    corpus = corpus_of(["a", "b"], ["c"])
    assert bm25("zebra", stats_for(["a", "b"]), corpus) == 0.0


def test_bm25_hand_value():
    # N=2, df=1, tf=1, len == avglen: idf = ln 2, length norm cancels.
    corpus = corpus_of(["apple", "pie"], ["other", "words"])
    got = bm25("apple", stats_for(["apple", "pie"]), corpus)
    assert got == pytest.approx(math.log(2.0), abs=1e-12)
    assert got == pytest.approx(0.6931, abs=5e-5)


def test_bm25_saturates_below_idf_times_k1_plus_1():
    docs = [["t"] * 50, ["x"] * 50]
    corpus = corpus_of(*docs)
    idf = math.log((2 - 1 + 0.5) / (1 + 0.5) + 1.0)
    scores = [bm25("t", stats_for(["t"] * tf + ["x"] * (50 - tf)), corpus) for tf in (1, 5, 25, 50)]
    assert all(a < b for a, b in zip(scores, scores[1:]))
    assert scores[-1] < idf * (1.2 + 1.0)


def test_tfidf_hand_value():
    # tf=3, N=10, df=2 -> 3 ln 5.
    docs = [["t", "t", "t"], ["t"]] + [["z"]] * 8
    corpus = corpus_of(*docs)
    got = tfidf("t", stats_for(["t", "t", "t"]), corpus)
    assert got == pytest.approx(3 * math.log(5.0), abs=1e-12)
    assert got == pytest.approx(4.8283, abs=5e-5)


def test_tfidf_zero_cases():
    corpus = corpus_of(["a"], ["a"])
    assert tfidf("missing", stats_for(["a"]), corpus) == 0.0
    # df == N makes idf exactly 0.
    assert tfidf("a", stats_for(["a"]), corpus) == 0.0


@given(tf=st.integers(1, 30), extra=st.integers(0, 5))
@settings(max_examples=40, deadline=None)
def test_monotone_in_tf(tf, extra):
    filler = ["pad"] * 40
    docs = [["t"] + filler, ["q"] + filler, ["t", "q"] + filler]
    corpus = corpus_of(*docs)
    lo = stats_for(["t"] * tf + filler[: 40 - tf + 1])
    hi = stats_for(["t"] * (tf + extra + 1) + filler[: 40 - tf - extra])
    # Field lengths kept equal so only tf moves.
    lo.length = hi.length = 41
    assert bm25("t", hi, corpus) >= bm25("t", lo, corpus)
    assert tfidf("t", hi, corpus) >= tfidf("t", lo, corpus)


# ---------------------------------------------------------------------------
# proximity
# ---------------------------------------------------------------------------


def test_adjacent_pair_value_is_one():
    fs = stats_for(["alpha", "beta", "pad"])
    mx, mn, avg = inv_min_dist_features(["alpha", "beta"], fs)
    assert mx == mn == avg == 1.0


def test_single_term_gives_zero_triple():
    fs = stats_for(["alpha", "pad"])
    assert inv_min_dist_features(["alpha"], fs) == (0.0, 0.0, 0.0)


def test_distance_two_and_four_hand_values():
    # a..b at distance 2; a..c at distance 4; b,c pair also present at distance 2.
    fs = stats_for(["a", "pad", "b", "pad", "c"])
    mx, mn, avg = inv_min_dist_features(["a", "b"], fs)
    assert (mx, mn, avg) == (0.25, 0.25, 0.25)
    mx, mn, avg = inv_min_dist_features(["a", "c"], fs)
    assert (mx, mn, avg) == (0.0625, 0.0625, 0.0625)
    mx, mn, avg = inv_min_dist_features(["a", "b", "c"], stats_for(["a", "x", "b", "x", "c"]))
    # contributing pairs: (a,b) d=2, (a,c) d=4, (b,c) d=2 -> values .25,.0625,.25
    assert mx == 0.25
    assert mn == 0.0625
    assert avg == pytest.approx((0.25 + 0.0625 + 0.25) / 3)


def test_duplicate_query_words_form_no_self_pair():
    fs = stats_for(["w", "w", "w"])
    assert inv_min_dist_features(["w", "w"], fs) == (0.0, 0.0, 0.0)


def test_min_distance_uses_closest_occurrences():
    fs = stats_for(["a", "pad", "pad", "b", "a"])
    mx, _, _ = inv_min_dist_features(["a", "b"], fs)
    assert mx == 1.0


@given(
    tokens=st.lists(st.sampled_from(["a", "b", "c", "pad"]), min_size=1, max_size=20),
    query=st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=3, unique=True),
)
@settings(max_examples=60, deadline=None)
def test_proximity_values_bounded(tokens, query):
    mx, mn, avg = inv_min_dist_features(query, stats_for(tokens))
    assert 0.0 <= mn <= avg <= mx <= 1.0
    if mx == 1.0:
        # An adjacent contributing pair must exist.
        positions = stats_for(tokens).positions
        adjacent = any(
            min(abs(pa - pb) for pa in positions[a] for pb in positions[b]) == 1
            for a, b in itertools.combinations(query, 2)
            if a in positions and b in positions
        )
        assert adjacent


# ---------------------------------------------------------------------------
# assembly against a brute-force oracle
# ---------------------------------------------------------------------------


def brute_force_features(query_terms, fields, corpus, schema):
    """Independent re-derivation of every schema column, loops only."""
    terms = list(dict.fromkeys(query_terms))
    out = {}

    def tf_of(t, fld):
        return len(fields[fld].positions.get(t, []))

    def idf_bm25(t, fld):
        df = corpus.df.get(fld, {}).get(t, 0)
        return math.log((corpus.doc_count - df + 0.5) / (df + 0.5) + 1)

    def bm25_of(t, fld):
        tf = tf_of(t, fld)
        if tf == 0:
            return 0.0
        norm = 1 - schema.b_param + schema.b_param * fields[fld].length / corpus.avg_len[fld]
        return idf_bm25(t, fld) * tf * (schema.k1 + 1) / (tf + schema.k1 * norm)

    def tfidf_of(t, fld):
        tf = tf_of(t, fld)
        df = corpus.df.get(fld, {}).get(t, 0)
        return tf * math.log(corpus.doc_count / df) if tf and df else 0.0

    for metric, fn in (("tfidf", tfidf_of), ("bm25", bm25_of)):
        for fld in schema.fields:
            vals = [fn(t, fld) for t in terms]
            out[f"{metric}_{fld}_max"] = max(vals)
            out[f"{metric}_{fld}_min"] = min(vals)
            out[f"{metric}_{fld}_avg"] = sum(vals) / len(vals)
            out[f"{metric}_{fld}_sum"] = sum(vals)
        if schema.include_title:
            out[f"{metric}_title_body_sum"] = sum(
                fn(t, "title") + fn(t, "body") for t in terms
            )

    for fld in schema.fields:
        vals = []
        for a, b in itertools.combinations(terms, 2):
            pa = fields[fld].positions.get(a)
            pb = fields[fld].positions.get(b)
            if pa and pb:
                d = min(abs(x - y) for x in pa for y in pb)
                vals.append(1.0 / d**2)
        out[f"inv_min_dist_{fld}_max"] = max(vals) if vals else 0.0
        out[f"inv_min_dist_{fld}_min"] = min(vals) if vals else 0.0
        out[f"inv_min_dist_{fld}_avg"] = sum(vals) / len(vals) if vals else 0.0
    return out


@pytest.fixture
def small_corpus():
    docs = [
        {"title": ["coffee", "guide"], "body": ["coffee", "beans", "and", "coffee", "roast"]},
        {"title": ["tea", "primer"], "body": ["tea", "leaves", "and", "water"]},
        {"title": ["coffee", "tea"], "body": ["both", "coffee", "and", "tea", "notes"]},
    ]
    return docs, build_corpus_stats(docs)


def test_assemble_matches_brute_force(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()
    query = ["coffee", "tea"]
    for doc in docs:
        fields = {name: FieldStats.from_tokens(name, toks) for name, toks in doc.items()}
        got = lexical_feature_map(query, fields, corpus, schema)
        want = brute_force_features(query, fields, corpus, schema)
        assert set(got) == set(want)
        for name in want:
            assert got[name] == pytest.approx(want[name], abs=1e-12), name


def test_assemble_vector_order_matches_schema(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()
    fields = {name: FieldStats.from_tokens(name, toks) for name, toks in docs[0].items()}
    vec = assemble_lexical_features(["coffee", "tea"], fields, corpus, schema)
    table = lexical_feature_map(["coffee", "tea"], fields, corpus, schema)
    names = schema.feature_names()
    assert vec.shape == (len(names),)
    assert list(vec) == [table[n] for n in names]


def test_all_zero_when_no_term_matches(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()
    fields = {name: FieldStats.from_tokens(name, toks) for name, toks in docs[1].items()}
    vec = assemble_lexical_features(["zebra", "quartz"], fields, corpus, schema)
    assert np.all(vec == 0.0)


def test_single_term_aggregates_collapse(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()
    fields = {name: FieldStats.from_tokens(name, toks) for name, toks in docs[0].items()}
    table = lexical_feature_map(["coffee"], fields, corpus, schema)
    for metric in ("tfidf", "bm25"):
        for fld in ("title", "body"):
            vals = {table[f"{metric}_{fld}_{agg}"] for agg in ("max", "min", "avg", "sum")}
            assert len(vals) == 1


def test_aggregate_coherence(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()
    query = ["coffee", "tea", "leaves"]
    for doc in docs:
        fields = {name: FieldStats.from_tokens(name, toks) for name, toks in doc.items()}
        table = lexical_feature_map(query, fields, corpus, schema)
        for metric in ("tfidf", "bm25"):
            for fld in ("title", "body"):
                mn = table[f"{metric}_{fld}_min"]
                avg = table[f"{metric}_{fld}_avg"]
                mx = table[f"{metric}_{fld}_max"]
                total = table[f"{metric}_{fld}_sum"]
                assert mn <= avg + 1e-12 <= mx + 1e-12
                assert total == pytest.approx(avg * 3, abs=1e-9)


def test_passage_schema_drops_title_columns(small_corpus):
    _, corpus = small_corpus
    schema = FeatureSchema.from_name("passage")
    names = schema.feature_names()
    assert all("title" not in n for n in names)
    assert len(names) == 11
    assert len(FeatureSchema.from_name("web").feature_names()) == 24


def test_schema_mismatch_detected(small_corpus):
    docs, corpus = small_corpus
    schema = FeatureSchema()  # wants a title field
    body_only = {"body": FieldStats.from_tokens("body", docs[0]["body"])}
    with pytest.raises(SchemaMismatchError):
        assemble_lexical_features(["coffee"], body_only, corpus, schema)


def test_pair_bm25_gated_by_corpus_stats(small_corpus):
    docs, _ = small_corpus
    fields = {name: FieldStats.from_tokens(name, toks) for name, toks in docs[0].items()}
    no_pairs = build_corpus_stats(docs)
    with pytest.raises(SchemaMismatchError):
        pair_bm25("coffee", "beans", fields["body"], no_pairs, window=8)
    with_pairs = build_corpus_stats(docs, pair_window=8)
    value = pair_bm25("coffee", "beans", fields["body"], with_pairs, window=8)
    assert value > 0.0
    schema = FeatureSchema(pair_bm25=True)
    table = lexical_feature_map(["coffee", "beans"], fields, with_pairs, schema)
    assert table["pair_bm25_body_max"] == pytest.approx(value)


# ---------------------------------------------------------------------------
# corpus stats persistence
# ---------------------------------------------------------------------------


def test_corpus_stats_roundtrip(tmp_path, small_corpus):
    docs, _ = small_corpus
    stats = build_corpus_stats(docs, pair_window=8)
    path = tmp_path / "corpus.stats"
    save_corpus_stats(path, stats)
    loaded = load_corpus_stats(path)
    assert loaded.doc_count == stats.doc_count
    assert loaded.avg_len == stats.avg_len
    assert loaded.df == stats.df
    assert loaded.pair_df == stats.pair_df
    assert loaded.pair_window == 8


def test_corpus_stats_bad_magic(tmp_path):
    path = tmp_path / "corrupt.stats"
    path.write_bytes(b"NOTSTATS" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_corpus_stats(path)
