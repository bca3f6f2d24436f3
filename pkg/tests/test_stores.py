"""Store round-trips, config guards, and the storage cost calculator.

The payload-size oracle here measures actual encoded bytes of records with
empty lexical/feature sections and compares them to the closed-form
calculator, so the formulas are checked against the real codec rather than
against themselves.
"""

import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from becr.core import sample_hyperplanes
from becr.stores import (
    ConfigMismatchError,
    DocumentNotFoundError,
    EncoderExport,
    ExportDocument,
    ExportGroup,
    ExportPiece,
    StoreConfig,
    StoreFormatError,
    _encode_doc_record,
    _encode_group_record,
    build_doc_store,
    build_token_store,
    doc_embedding_payload_bytes,
    format_bytes,
    group_embedding_payload_bytes,
    ingest_document,
    open_doc_store,
    open_token_store,
    read_export,
    require_compatible,
    storage_estimate,
    write_export,
)
from becr.compose import TokenGroupEmbedding


def make_piece(rng, terms, n_layers, dim):
    return ExportPiece(
        term_vectors=rng.standard_normal((terms, n_layers, dim)).astype(np.float32),
        cls_vector=rng.standard_normal(dim).astype(np.float32),
    )


def make_export(rng, n_docs=10, n_groups=6, layer_ids=(0, 1, 12), dim=16):
    n_layers = len(layer_ids)
    docs = []
    for i in range(n_docs):
        pieces = [make_piece(rng, int(rng.integers(1, 5)), n_layers, dim)
                  for _ in range(int(rng.integers(1, 3)))]
        docs.append(
            ExportDocument(
                doc_id=f"doc-{i}",
                pieces=pieces,
                fields={"body": ["alpha", "beta", f"tok{i}"], "title": ["alpha"]},
                features={"pagerank": float(i) / 10.0},
            )
        )
    groups = []
    for j in range(n_groups):
        members = 1 if j % 2 == 0 else 2
        groups.append(
            ExportGroup(
                group_id=f"g{j}" if members == 1 else f"g{j}\x1fg{j + 1}",
                vectors=rng.standard_normal((members, n_layers, dim)).astype(np.float32),
            )
        )
    return EncoderExport(dim=dim, layer_ids=layer_ids, documents=docs, groups=groups)


def records_equal(a, b):
    if a.doc_id != b.doc_id:
        return False
    if not np.array_equal(a.cls_vector, b.cls_vector):
        return False
    for left, right in ((a.term_footprints, b.term_footprints), (a.term_vectors, b.term_vectors)):
        if (left is None) != (right is None):
            return False
        if left is not None and not np.array_equal(left, right):
            return False
    return a.field_stats == b.field_stats and a.other_features == b.other_features


# ----------------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------------


class TestIngest:
    config = StoreConfig(mode="lsh", dim=16, layer_ids=(0, 12), bits=64, seed=3)

    def test_single_piece_cls_kept_exactly(self):
        rng = np.random.default_rng(0)
        piece = make_piece(rng, 4, 3, 16)
        doc = ExportDocument(doc_id="d", pieces=[piece])
        record = ingest_document(doc, (0, 1, 12), self.config)
        assert np.array_equal(record.cls_vector, piece.cls_vector)

    def test_opposite_cls_vectors_average_to_zero(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(16).astype(np.float32)
        pieces = [
            ExportPiece(term_vectors=rng.standard_normal((2, 3, 16)).astype(np.float32), cls_vector=u),
            ExportPiece(term_vectors=rng.standard_normal((2, 3, 16)).astype(np.float32), cls_vector=-u),
        ]
        record = ingest_document(ExportDocument(doc_id="d", pieces=pieces), (0, 1, 12), self.config)
        assert np.array_equal(record.cls_vector, np.zeros(16, dtype=np.float32))

    def test_piece_concatenation_row_count(self):
        rng = np.random.default_rng(2)
        config = StoreConfig(mode="lsh", dim=8, layer_ids=(0,), bits=64, seed=0)
        pieces = [make_piece(rng, n, 1, 8) for n in (300, 300, 257)]
        record = ingest_document(ExportDocument(doc_id="d", pieces=pieces), (0,), config)
        assert record.term_count == 857
        assert record.term_footprints.shape == (857, 1, 1)

    def test_layer_selection_picks_requested_columns(self):
        rng = np.random.default_rng(3)
        piece = make_piece(rng, 5, 4, 16)
        config = StoreConfig(mode="full", dim=16, layer_ids=(0, 9))
        record = ingest_document(ExportDocument(doc_id="d", pieces=[piece]), (0, 3, 6, 9), config)
        assert np.array_equal(record.term_vectors, piece.term_vectors[:, [0, 3], :][:, [0, 1], :])
        assert np.array_equal(record.term_vectors[:, 1, :], piece.term_vectors[:, 3, :])

    def test_unknown_layer_rejected(self):
        rng = np.random.default_rng(4)
        piece = make_piece(rng, 2, 2, 16)
        config = StoreConfig(mode="full", dim=16, layer_ids=(7,))
        with pytest.raises(ConfigMismatchError):
            ingest_document(ExportDocument(doc_id="d", pieces=[piece]), (0, 1), config)

    def test_empty_piece_rejected(self):
        rng = np.random.default_rng(5)
        pieces = [make_piece(rng, 0, 3, 16)]
        with pytest.raises(ValueError, match="empty piece"):
            ingest_document(ExportDocument(doc_id="d", pieces=pieces), (0, 1, 12), self.config)

    def test_no_pieces_rejected(self):
        with pytest.raises(ValueError, match="no pieces"):
            ingest_document(ExportDocument(doc_id="d", pieces=[]), (0, 1, 12), self.config)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(6)
        piece = make_piece(rng, 2, 3, 8)
        with pytest.raises(ValueError, match="dimension"):
            ingest_document(ExportDocument(doc_id="d", pieces=[piece]), (0, 1, 12), self.config)


# ----------------------------------------------------------------------------
# document store round-trips
# ----------------------------------------------------------------------------


class TestDocStore:
    def test_roundtrip_100_docs_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        export = make_export(rng, n_docs=100, layer_ids=(0, 1, 2), dim=12)
        config = StoreConfig(mode="lsh", dim=12, layer_ids=(0, 2), bits=128, seed=11)
        path = tmp_path / "docs.becrdoc"
        count = build_doc_store(export, config, path)
        assert count == 100

        planes = config.planes()
        with open_doc_store(path, expect=config) as store:
            assert store.record_count == 100
            for doc in export.documents:
                want = ingest_document(doc, export.layer_ids, config, planes)
                got = store.fetch(doc.doc_id)
                assert records_equal(want, got)

    def test_roundtrip_full_mode(self, tmp_path):
        rng = np.random.default_rng(8)
        export = make_export(rng, n_docs=20, layer_ids=(0, 1), dim=10)
        config = StoreConfig(mode="full", dim=10, layer_ids=(0, 1))
        path = tmp_path / "docs.becrdoc"
        build_doc_store(export, config, path)
        with open_doc_store(path) as store:
            for doc in export.documents:
                want = ingest_document(doc, export.layer_ids, config)
                assert records_equal(want, store.fetch(doc.doc_id))

    def test_missing_doc_raises(self, tmp_path):
        rng = np.random.default_rng(9)
        export = make_export(rng, n_docs=3)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=1)
        path = tmp_path / "docs.becrdoc"
        build_doc_store(export, config, path)
        with open_doc_store(path) as store:
            assert "doc-1" in store
            assert "nope" not in store
            with pytest.raises(DocumentNotFoundError):
                store.fetch("nope")

    def test_duplicate_doc_ids_rejected(self, tmp_path):
        rng = np.random.default_rng(10)
        export = make_export(rng, n_docs=2)
        export.documents[1].doc_id = export.documents[0].doc_id
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=1)
        with pytest.raises(ValueError, match="duplicate"):
            build_doc_store(export, config, tmp_path / "dup.becrdoc")

    def test_keys_lists_build_order(self, tmp_path):
        rng = np.random.default_rng(11)
        export = make_export(rng, n_docs=5)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=1)
        path = tmp_path / "docs.becrdoc"
        build_doc_store(export, config, path)
        with open_doc_store(path) as store:
            assert store.keys() == [d.doc_id for d in export.documents]

    def test_config_mismatch_detected_at_open(self, tmp_path):
        rng = np.random.default_rng(12)
        export = make_export(rng, n_docs=2, layer_ids=(0, 1, 12))
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0, 12), bits=128, seed=5)
        path = tmp_path / "docs.becrdoc"
        build_doc_store(export, config, path)

        variants = [
            StoreConfig(mode="lsh", dim=16, layer_ids=(0, 12), bits=64, seed=5),
            StoreConfig(mode="lsh", dim=16, layer_ids=(0, 12), bits=128, seed=6),
            StoreConfig(mode="lsh", dim=16, layer_ids=(0, 1), bits=128, seed=5),
            StoreConfig(mode="lsh", dim=32, layer_ids=(0, 12), bits=128, seed=5),
            StoreConfig(mode="full", dim=16, layer_ids=(0, 12)),
        ]
        for wrong in variants:
            with pytest.raises(ConfigMismatchError):
                open_doc_store(path, expect=wrong)
        with open_doc_store(path, expect=config) as store:
            assert store.config == config

    def test_wrong_kind_rejected(self, tmp_path):
        rng = np.random.default_rng(13)
        export = make_export(rng, n_docs=1)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=1)
        path = tmp_path / "store.becrtok"
        build_token_store(export, config, path)
        with pytest.raises(StoreFormatError, match="magic"):
            open_doc_store(path)

    def test_require_compatible(self):
        a = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=1)
        b = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=2)
        require_compatible(a, a)
        with pytest.raises(ConfigMismatchError):
            require_compatible(a, b)

    def test_concurrent_fetches_agree(self, tmp_path):
        rng = np.random.default_rng(14)
        export = make_export(rng, n_docs=12)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0, 1), bits=64, seed=2)
        path = tmp_path / "docs.becrdoc"
        build_doc_store(export, config, path)
        with open_doc_store(path) as store:
            ids = [d.doc_id for d in export.documents] * 8

            def grab(doc_id):
                return store.fetch(doc_id)

            with ThreadPoolExecutor(max_workers=8) as pool:
                fetched = list(pool.map(grab, ids))
            for doc_id, record in zip(ids, fetched):
                assert records_equal(record, store.fetch(doc_id))


# ----------------------------------------------------------------------------
# token store
# ----------------------------------------------------------------------------


class TestTokenStore:
    def test_roundtrip_and_member_counts(self, tmp_path):
        rng = np.random.default_rng(15)
        export = make_export(rng, n_docs=1, n_groups=8, layer_ids=(0, 1), dim=16)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0, 1), bits=192, seed=4)
        path = tmp_path / "tokens.becrtok"
        count = build_token_store(export, config, path)
        assert count == 8

        planes = config.planes()
        with open_token_store(path, expect=config) as store:
            for group in export.groups:
                emb = store.fetch(group.group_id)
                assert emb is not None
                assert emb.members == group.vectors.shape[0]
                assert emb.bits == 192
                flat = group.vectors.reshape(-1, 16)
                from becr.core import footprint_batch

                want = footprint_batch(flat, planes).reshape(
                    group.vectors.shape[0], 2, 3
                )
                assert np.array_equal(emb.footprints, want)

    def test_absent_group_returns_none(self, tmp_path):
        rng = np.random.default_rng(16)
        export = make_export(rng, n_docs=1, n_groups=2)
        config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=4)
        path = tmp_path / "tokens.becrtok"
        build_token_store(export, config, path)
        with open_token_store(path) as store:
            assert store.fetch("never-seen") is None

    def test_full_mode_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        export = make_export(rng, n_docs=1, n_groups=4, layer_ids=(0, 1, 12), dim=8)
        config = StoreConfig(mode="full", dim=8, layer_ids=(0, 12))
        path = tmp_path / "tokens.becrtok"
        build_token_store(export, config, path)
        with open_token_store(path) as store:
            for group in export.groups:
                emb = store.fetch(group.group_id)
                assert np.array_equal(emb.vectors, group.vectors[:, [0, 2], :])


# ----------------------------------------------------------------------------
# encoder export container
# ----------------------------------------------------------------------------


class TestExportFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(18)
        export = make_export(rng, n_docs=4, n_groups=3, layer_ids=(0, 5), dim=6)
        path = tmp_path / "enc.becrexp"
        write_export(path, export)
        back = read_export(path)
        assert back.dim == 6 and back.layer_ids == (0, 5)
        for orig, copy in zip(export.documents, back.documents):
            assert copy.doc_id == orig.doc_id
            assert copy.fields == orig.fields
            assert copy.features == orig.features
            for op, cp in zip(orig.pieces, copy.pieces):
                assert np.array_equal(op.term_vectors, cp.term_vectors)
                assert np.array_equal(op.cls_vector, cp.cls_vector)
        for orig, copy in zip(export.groups, back.groups):
            assert copy.group_id == orig.group_id
            assert np.array_equal(copy.vectors, orig.vectors)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.becrexp"
        path.write_bytes(b"NOTANEXPORT!" * 4)
        with pytest.raises(StoreFormatError):
            read_export(path)


# ----------------------------------------------------------------------------
# storage cost calculator
# ----------------------------------------------------------------------------


def encoded_embedding_bytes_doc(record, config):
    """Measured embedding bytes: total frame minus key framing and the empty
    lexical/feature sections (1 + 2 bytes)."""
    payload = _encode_doc_record(record, config)
    key_len = struct.unpack_from("<I", payload, 0)[0]
    return len(payload) - 4 - key_len - 4 - 1 - 2


def encoded_embedding_bytes_group(group_id, emb, config):
    payload = _encode_group_record(group_id, emb, config)
    key_len = struct.unpack_from("<I", payload, 0)[0]
    return len(payload) - 4 - key_len - 1


class TestStorageEstimate:
    def test_per_document_payload_is_exact(self):
        assert doc_embedding_payload_bytes(857, 5, 256, 768, "lsh") == 140_192

    def test_payload_helper_matches_encoded_bytes(self):
        rng = np.random.default_rng(19)
        config = StoreConfig(mode="lsh", dim=24, layer_ids=(0, 1, 2), bits=128, seed=9)
        planes = config.planes()
        doc = ExportDocument(doc_id="d0", pieces=[make_piece(rng, 7, 3, 24)])
        record = ingest_document(doc, (0, 1, 2), config, planes)
        assert encoded_embedding_bytes_doc(record, config) == doc_embedding_payload_bytes(
            7, 3, 128, 24, "lsh"
        )

        full_config = StoreConfig(mode="full", dim=24, layer_ids=(0, 1, 2))
        full_record = ingest_document(doc, (0, 1, 2), full_config)
        assert encoded_embedding_bytes_doc(full_record, full_config) == (
            doc_embedding_payload_bytes(7, 3, 0, 24, "full")
        )

    def test_closed_forms_match_record_summation(self):
        rng = np.random.default_rng(20)
        dim, m, n_docs = 8, 6, 9
        layer_ids = (0, 1)
        config = StoreConfig(mode="lsh", dim=dim, layer_ids=layer_ids, bits=64, seed=2)
        planes = config.planes()
        total = 0
        for i in range(n_docs):
            doc = ExportDocument(doc_id=f"d{i}", pieces=[make_piece(rng, m, 2, dim)])
            record = ingest_document(doc, layer_ids, config, planes)
            total += encoded_embedding_bytes_doc(record, config)
        assert total == storage_estimate(
            "documents", "compressed", m=m, kept_layers=2, bits=64, doc_count=n_docs, dim=dim
        )

        full_config = StoreConfig(mode="full", dim=dim, layer_ids=layer_ids)
        total_full = 0
        for i in range(n_docs):
            doc = ExportDocument(doc_id=f"d{i}", pieces=[make_piece(rng, m, 2, dim)])
            record = ingest_document(doc, layer_ids, full_config)
            total_full += encoded_embedding_bytes_doc(record, full_config)
        assert total_full == storage_estimate(
            "documents", "original", m=m, layers=2, doc_count=n_docs, dim=dim
        )

    def test_token_closed_forms_match_record_summation(self):
        rng = np.random.default_rng(21)
        dim, layer_ids = 8, (0, 1, 2)
        config = StoreConfig(mode="lsh", dim=dim, layer_ids=layer_ids, bits=128, seed=3)
        n_uni, n_pair = 5, 4
        total = 0
        for i in range(n_uni + n_pair):
            members = 1 if i < n_uni else 2
            grid = rng.integers(0, 2**63, size=(members, 3, 2), dtype=np.uint64)
            emb = TokenGroupEmbedding(footprints=grid, bits=128)
            total += encoded_embedding_bytes_group(f"g{i}", emb, config)
        assert total == storage_estimate(
            "tokens", "compressed", kept_layers=3, bits=128,
            unigram_count=n_uni, pair_count=n_pair,
        )

        full_config = StoreConfig(mode="full", dim=dim, layer_ids=layer_ids)
        total_full = 0
        for i in range(n_uni + n_pair):
            members = 1 if i < n_uni else 2
            emb = TokenGroupEmbedding(
                vectors=rng.standard_normal((members, 3, dim)).astype(np.float32)
            )
            total_full += encoded_embedding_bytes_group(f"g{i}", emb, full_config)
        assert total_full == storage_estimate(
            "tokens", "original", layers=3, unigram_count=n_uni, pair_count=n_pair, dim=dim
        )

    def test_published_cost_table(self):
        cases = [
            (storage_estimate("documents", "original", m=857, layers=13, doc_count=50e6), 1_711e12),
            (
                storage_estimate(
                    "documents", "compressed", m=857, kept_layers=5, bits=256, doc_count=50e6
                ),
                7.0e12,
            ),
            (
                storage_estimate(
                    "tokens", "original", layers=13, unigram_count=14.5e6, pair_count=467e6
                ),
                37.9e12,
            ),
            (
                storage_estimate(
                    "tokens", "compressed", kept_layers=5, bits=256,
                    unigram_count=14.5e6, pair_count=467e6,
                ),
                152e9,
            ),
            (
                storage_estimate(
                    "tokens", "compressed", kept_layers=5, bits=256,
                    unigram_count=32.4e6, pair_count=940.3e6,
                ),
                305.5e9,
            ),
        ]
        for got, want in cases:
            assert abs(got - want) <= 0.01 * want

    def test_nonpositive_parameters_rejected(self):
        with pytest.raises(ValueError):
            storage_estimate("documents", "original", m=0, layers=13, doc_count=1)
        with pytest.raises(ValueError):
            storage_estimate("tokens", "compressed", kept_layers=5, bits=0, unigram_count=1)
        with pytest.raises(ValueError):
            storage_estimate("shelves", "original", m=1, layers=1, doc_count=1)

    def test_format_bytes_decimal_units(self):
        assert format_bytes(7_009_600_000_000) == "7.0 TB"
        assert format_bytes(151_760_000_000) == "151.8 GB"
        assert format_bytes(512) == "512 B"


# ----------------------------------------------------------------------------
# property: random records survive the store round-trip
# ----------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(
    data=st.data(),
    n_docs=st.integers(min_value=1, max_value=6),
    bits=st.sampled_from([64, 128]),
)
def test_roundtrip_property(tmp_path_factory, data, n_docs, bits):
    seed = data.draw(st.integers(min_value=0, max_value=2**32 - 1))
    rng = np.random.default_rng(seed)
    dim = int(data.draw(st.integers(min_value=2, max_value=12)))
    config = StoreConfig(mode="lsh", dim=dim, layer_ids=(0, 1), bits=bits, seed=seed % 97)
    docs = []
    for i in range(n_docs):
        pieces = [make_piece(rng, int(rng.integers(1, 4)), 2, dim)
                  for _ in range(int(rng.integers(1, 3)))]
        fields = {}
        if rng.integers(0, 2):
            fields["body"] = [f"w{int(t)}" for t in rng.integers(0, 5, size=6)]
        docs.append(ExportDocument(doc_id=f"doc-{i}", pieces=pieces, fields=fields))
    export = EncoderExport(dim=dim, layer_ids=(0, 1), documents=docs, groups=[])

    path = tmp_path_factory.mktemp("prop") / "docs.becrdoc"
    build_doc_store(export, config, path)
    planes = config.planes()
    with open_doc_store(path, expect=config) as store:
        for doc in docs:
            want = ingest_document(doc, (0, 1), config, planes)
            assert records_equal(want, store.fetch(doc.doc_id))


def test_hyperplanes_regenerated_not_stored(tmp_path):
    rng = np.random.default_rng(22)
    export = make_export(rng, n_docs=1, layer_ids=(0,), dim=16)
    config = StoreConfig(mode="lsh", dim=16, layer_ids=(0,), bits=64, seed=77)
    path = tmp_path / "docs.becrdoc"
    build_doc_store(export, config, path)
    with open_doc_store(path) as store:
        planes = store.config.planes()
    assert np.array_equal(planes.planes, sample_hyperplanes(77, 64, 16).planes)
