"""Binary key-value stores for document and token-group embeddings.

Both stores share one file layout: a fixed 128-byte little-endian header, a
payload region of length-framed records, and a trailing open-addressing hash
index mapping FNV-1a key hashes to record offsets, giving O(1) fetch by id.
Hyperplanes are never persisted; the header keeps (bits, seed, dim, layers)
and readers regenerate planes on demand, so any configuration mismatch
between a store and the runtime, or between two stores, surfaces at open
time rather than as silently wrong similarities.

A store is built in one of two modes. "lsh" keeps word-packed sign footprints
per term per layer plus the full-precision [CLS] vector, which is the
compressed production layout. "full" keeps the raw float32 vectors and exists
for exact-scoring baselines and fidelity measurements.

The encoder export (.becrexp) is the ingestion contract: a JSON manifest
(dimensions, layer ids, per-document piece sizes, tokenized fields, named
scalars) followed by raw little-endian float32 blocks, so any encoder in any
language can produce it.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from becr.compose import TokenGroupEmbedding
from becr.core import HyperplaneSet, footprint_batch, sample_hyperplanes
from becr.lexical import FieldStats

FORMAT_VERSION = 1
DOC_MAGIC = b"BECRDOC1"
TOKEN_MAGIC = b"BECRTOK1"
EXPORT_MAGIC = b"BECREXP1"

HEADER_SIZE = 128
_HEADER_FMT = "<8sIIIIIIQQQQ16h"
_HEADER_PAD = HEADER_SIZE - struct.calcsize(_HEADER_FMT)
MAX_LAYERS = 16

MODE_FULL = "full"
MODE_LSH = "lsh"

# The default five layers kept from a 13-layer encoder stack: the embedding
# layer, the first three encoder layers, and the last encoder layer.
DEFAULT_LAYER_IDS = (0, 1, 2, 3, 12)


class StoreFormatError(ValueError):
    """File is not a readable store of the expected kind/version."""


class ConfigMismatchError(ValueError):
    """Store configuration disagrees with the runtime or a sibling store."""


class DocumentNotFoundError(KeyError):
    """Requested doc_id is absent from the document store."""


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StoreConfig:
    mode: str
    dim: int
    layer_ids: tuple[int, ...]
    bits: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_FULL, MODE_LSH):
            raise ValueError(f"mode must be 'full' or 'lsh', got {self.mode!r}")
        if self.dim <= 0:
            raise ValueError("embedding dimension must be positive")
        if not self.layer_ids:
            raise ValueError("at least one layer must be selected")
        if len(self.layer_ids) > MAX_LAYERS:
            raise ValueError(f"at most {MAX_LAYERS} layers supported")
        if self.mode == MODE_LSH and (self.bits <= 0 or self.bits % 64 != 0):
            raise ValueError("lsh mode needs bits as a positive multiple of 64")

    @property
    def n_layers(self) -> int:
        return len(self.layer_ids)

    @property
    def words(self) -> int:
        return self.bits // 64

    def planes(self) -> HyperplaneSet:
        if self.mode != MODE_LSH:
            raise ValueError("full-precision stores have no hyperplanes")
        return sample_hyperplanes(self.seed, self.bits, self.dim)


def require_compatible(*configs: StoreConfig) -> None:
    """Stores used together must agree on everything footprint-relevant."""
    first = configs[0]
    for other in configs[1:]:
        if first != other:
            raise ConfigMismatchError(
                f"store configurations differ: {first} vs {other}"
            )


# ----------------------------------------------------------------------------
# encoder export
# ----------------------------------------------------------------------------


@dataclass
class ExportPiece:
    """One encoded text piece: per-term per-layer vectors plus a [CLS] vector."""

    term_vectors: np.ndarray  # (terms, L, p) float32
    cls_vector: np.ndarray  # (p,) float32


@dataclass
class ExportDocument:
    doc_id: str
    pieces: list[ExportPiece]
    fields: dict[str, list[str]] = field(default_factory=dict)
    features: dict[str, float] = field(default_factory=dict)


@dataclass
class ExportGroup:
    group_id: str
    vectors: np.ndarray  # (members, L, p) float32, members in {1, 2}


@dataclass
class EncoderExport:
    dim: int
    layer_ids: tuple[int, ...]
    documents: Iterable[ExportDocument]
    groups: Iterable[ExportGroup]


def write_export(path: str | Path, export: EncoderExport) -> None:
    documents = list(export.documents)
    groups = list(export.groups)
    manifest = {
        "version": FORMAT_VERSION,
        "dim": export.dim,
        "layer_ids": list(export.layer_ids),
        "documents": [
            {
                "doc_id": d.doc_id,
                "pieces": [int(p.term_vectors.shape[0]) for p in d.pieces],
                "fields": d.fields,
                "features": d.features,
            }
            for d in documents
        ],
        "groups": [
            {"id": g.group_id, "members": int(g.vectors.shape[0])} for g in groups
        ],
    }
    header = json.dumps(manifest, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as out:
        out.write(EXPORT_MAGIC)
        out.write(struct.pack("<Q", len(header)))
        out.write(header)
        for d in documents:
            for piece in d.pieces:
                out.write(np.ascontiguousarray(piece.term_vectors, dtype="<f4").tobytes())
                out.write(np.ascontiguousarray(piece.cls_vector, dtype="<f4").tobytes())
        for g in groups:
            out.write(np.ascontiguousarray(g.vectors, dtype="<f4").tobytes())


def read_export(path: str | Path) -> EncoderExport:
    raw = Path(path).read_bytes()
    if raw[:8] != EXPORT_MAGIC:
        raise StoreFormatError(f"{path} is not an encoder export (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    manifest = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported export version {manifest.get('version')}")
    dim = int(manifest["dim"])
    layer_ids = tuple(int(x) for x in manifest["layer_ids"])
    n_layers = len(layer_ids)

    off = 16 + header_len
    data = np.frombuffer(raw, dtype="<f4", offset=off)
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        block = data[pos : pos + count]
        if block.size != count:
            raise StoreFormatError("export data region shorter than its manifest")
        pos += count
        return block

    documents = []
    for dm in manifest["documents"]:
        pieces = []
        for terms in dm["pieces"]:
            vecs = take(terms * n_layers * dim).reshape(terms, n_layers, dim)
            cls = take(dim).copy()
            pieces.append(ExportPiece(term_vectors=vecs.copy(), cls_vector=cls))
        documents.append(
            ExportDocument(
                doc_id=dm["doc_id"],
                pieces=pieces,
                fields={k: list(v) for k, v in dm.get("fields", {}).items()},
                features={k: float(v) for k, v in dm.get("features", {}).items()},
            )
        )
    groups = []
    for gm in manifest["groups"]:
        vecs = take(gm["members"] * n_layers * dim).reshape(gm["members"], n_layers, dim)
        groups.append(ExportGroup(group_id=gm["id"], vectors=vecs.copy()))
    return EncoderExport(dim=dim, layer_ids=layer_ids, documents=documents, groups=groups)


# ----------------------------------------------------------------------------
# document records
# ----------------------------------------------------------------------------


@dataclass
class DocumentRecord:
    doc_id: str
    cls_vector: np.ndarray  # (p,) float32
    term_footprints: np.ndarray | None = None  # (m, L', W) uint64
    term_vectors: np.ndarray | None = None  # (m, L', p) float32
    field_stats: dict[str, FieldStats] = field(default_factory=dict)
    other_features: dict[str, float] = field(default_factory=dict)

    @property
    def term_count(self) -> int:
        grid = self.term_footprints if self.term_footprints is not None else self.term_vectors
        assert grid is not None
        return int(grid.shape[0])


def select_layer_indices(
    export_layer_ids: Sequence[int], wanted: Sequence[int]
) -> list[int]:
    indices = []
    for layer in wanted:
        if layer not in export_layer_ids:
            raise ConfigMismatchError(
                f"layer {layer} not present in export layers {tuple(export_layer_ids)}"
            )
        indices.append(list(export_layer_ids).index(layer))
    return indices


def ingest_document(
    doc: ExportDocument,
    export_layer_ids: Sequence[int],
    config: StoreConfig,
    planes: HyperplaneSet | None = None,
) -> DocumentRecord:
    """Turn one export document into its store record.

    Pieces are concatenated in order; the [CLS] vector is the arithmetic mean
    of the piece [CLS] vectors and stays full precision either way.
    """
    if not doc.pieces:
        raise ValueError(f"document {doc.doc_id!r} has no pieces")
    for piece in doc.pieces:
        if piece.term_vectors.shape[0] == 0:
            raise ValueError(f"document {doc.doc_id!r} contains an empty piece")
        if piece.term_vectors.shape[-1] != config.dim or piece.cls_vector.shape != (config.dim,):
            raise ValueError(
                f"document {doc.doc_id!r}: vector dimension does not match p={config.dim}"
            )

    indices = select_layer_indices(export_layer_ids, config.layer_ids)
    stacked = np.concatenate(
        [piece.term_vectors[:, indices, :] for piece in doc.pieces], axis=0
    ).astype(np.float32, copy=False)
    cls = np.mean(
        np.stack([piece.cls_vector for piece in doc.pieces]).astype(np.float64), axis=0
    ).astype(np.float32)

    stats = {
        name: FieldStats.from_tokens(name, tokens) for name, tokens in doc.fields.items()
    }
    record = DocumentRecord(
        doc_id=doc.doc_id,
        cls_vector=cls,
        field_stats=stats,
        other_features=dict(doc.features),
    )
    if config.mode == MODE_LSH:
        if planes is None:
            planes = config.planes()
        m, n_layers, dim = stacked.shape
        flat = stacked.reshape(m * n_layers, dim)
        record.term_footprints = footprint_batch(flat, planes).reshape(
            m, n_layers, config.words
        )
    else:
        record.term_vectors = stacked
    return record


def doc_embedding_payload_bytes(m: int, n_layers: int, bits: int, dim: int, mode: str) -> int:
    """Bytes of the embedding section of one document record."""
    if mode == MODE_LSH:
        return m * n_layers * (bits // 8) + 4 * dim
    return m * n_layers * 4 * dim + 4 * dim


def group_embedding_payload_bytes(
    members: int, n_layers: int, bits: int, dim: int, mode: str
) -> int:
    if mode == MODE_LSH:
        return members * n_layers * (bits // 8)
    return members * n_layers * 4 * dim


# ----------------------------------------------------------------------------
# record codecs
# ----------------------------------------------------------------------------


def _encode_field_stats(stats: Mapping[str, FieldStats]) -> bytes:
    parts = [struct.pack("<B", len(stats))]
    for name in stats:
        fs = stats[name]
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<B", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<II", fs.length, len(fs.positions)))
        for term in fs.positions:
            raw_term = term.encode("utf-8")
            positions = fs.positions[term]
            parts.append(struct.pack("<H", len(raw_term)))
            parts.append(raw_term)
            parts.append(struct.pack("<I", len(positions)))
            parts.append(np.asarray(positions, dtype="<u4").tobytes())
    return b"".join(parts)


def _decode_field_stats(buf: memoryview, off: int) -> tuple[dict[str, FieldStats], int]:
    (n_fields,) = struct.unpack_from("<B", buf, off)
    off += 1
    out: dict[str, FieldStats] = {}
    for _ in range(n_fields):
        (name_len,) = struct.unpack_from("<B", buf, off)
        off += 1
        name = bytes(buf[off : off + name_len]).decode("utf-8")
        off += name_len
        length, n_terms = struct.unpack_from("<II", buf, off)
        off += 8
        positions: dict[str, list[int]] = {}
        for _ in range(n_terms):
            (term_len,) = struct.unpack_from("<H", buf, off)
            off += 2
            term = bytes(buf[off : off + term_len]).decode("utf-8")
            off += term_len
            (n_pos,) = struct.unpack_from("<I", buf, off)
            off += 4
            positions[term] = np.frombuffer(buf, dtype="<u4", count=n_pos, offset=off).tolist()
            off += 4 * n_pos
        out[name] = FieldStats(field=name, length=length, positions=positions)
    return out, off


def _encode_features(features: Mapping[str, float]) -> bytes:
    parts = [struct.pack("<H", len(features))]
    for name in features:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<B", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<d", features[name]))
    return b"".join(parts)


def _decode_features(buf: memoryview, off: int) -> tuple[dict[str, float], int]:
    (count,) = struct.unpack_from("<H", buf, off)
    off += 2
    out: dict[str, float] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<B", buf, off)
        off += 1
        name = bytes(buf[off : off + name_len]).decode("utf-8")
        off += name_len
        (value,) = struct.unpack_from("<d", buf, off)
        off += 8
        out[name] = value
    return out, off


def _encode_doc_record(record: DocumentRecord, config: StoreConfig) -> bytes:
    key = record.doc_id.encode("utf-8")
    m = record.term_count
    parts = [struct.pack("<I", len(key)), key, struct.pack("<I", m)]
    if config.mode == MODE_LSH:
        grid = record.term_footprints
        assert grid is not None and grid.shape == (m, config.n_layers, config.words)
        parts.append(np.ascontiguousarray(grid, dtype="<u8").tobytes())
    else:
        grid = record.term_vectors
        assert grid is not None and grid.shape == (m, config.n_layers, config.dim)
        parts.append(np.ascontiguousarray(grid, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(record.cls_vector, dtype="<f4").tobytes())
    parts.append(_encode_field_stats(record.field_stats))
    parts.append(_encode_features(record.other_features))
    return b"".join(parts)


def _decode_doc_record(buf: memoryview, config: StoreConfig) -> DocumentRecord:
    (key_len,) = struct.unpack_from("<I", buf, 0)
    off = 4
    doc_id = bytes(buf[off : off + key_len]).decode("utf-8")
    off += key_len
    (m,) = struct.unpack_from("<I", buf, off)
    off += 4
    footprints = None
    vectors = None
    if config.mode == MODE_LSH:
        count = m * config.n_layers * config.words
        footprints = (
            np.frombuffer(buf, dtype="<u8", count=count, offset=off)
            .reshape(m, config.n_layers, config.words)
            .astype(np.uint64)
        )
        off += 8 * count
    else:
        count = m * config.n_layers * config.dim
        vectors = (
            np.frombuffer(buf, dtype="<f4", count=count, offset=off)
            .reshape(m, config.n_layers, config.dim)
            .astype(np.float32)
        )
        off += 4 * count
    cls = np.frombuffer(buf, dtype="<f4", count=config.dim, offset=off).astype(np.float32)
    off += 4 * config.dim
    stats, off = _decode_field_stats(buf, off)
    features, off = _decode_features(buf, off)
    return DocumentRecord(
        doc_id=doc_id,
        cls_vector=cls,
        term_footprints=footprints,
        term_vectors=vectors,
        field_stats=stats,
        other_features=features,
    )


def _encode_group_record(group_id: str, emb: TokenGroupEmbedding, config: StoreConfig) -> bytes:
    key = group_id.encode("utf-8")
    parts = [struct.pack("<I", len(key)), key]
    if config.mode == MODE_LSH:
        grid = emb.footprints
        assert grid is not None
        parts.append(struct.pack("<B", grid.shape[0]))
        parts.append(np.ascontiguousarray(grid, dtype="<u8").tobytes())
    else:
        grid = emb.vectors
        assert grid is not None
        parts.append(struct.pack("<B", grid.shape[0]))
        parts.append(np.ascontiguousarray(grid, dtype="<f4").tobytes())
    return b"".join(parts)


def _decode_group_record(buf: memoryview, config: StoreConfig) -> tuple[str, TokenGroupEmbedding]:
    (key_len,) = struct.unpack_from("<I", buf, 0)
    off = 4
    group_id = bytes(buf[off : off + key_len]).decode("utf-8")
    off += key_len
    (members,) = struct.unpack_from("<B", buf, off)
    off += 1
    if config.mode == MODE_LSH:
        count = members * config.n_layers * config.words
        grid = (
            np.frombuffer(buf, dtype="<u8", count=count, offset=off)
            .reshape(members, config.n_layers, config.words)
            .astype(np.uint64)
        )
        return group_id, TokenGroupEmbedding(footprints=grid, bits=config.bits)
    count = members * config.n_layers * config.dim
    grid = (
        np.frombuffer(buf, dtype="<f4", count=count, offset=off)
        .reshape(members, config.n_layers, config.dim)
        .astype(np.float32)
    )
    return group_id, TokenGroupEmbedding(vectors=grid)


# ----------------------------------------------------------------------------
# file layout
# ----------------------------------------------------------------------------


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _pack_header(
    magic: bytes, config: StoreConfig, record_count: int, index_offset: int, slots: int
) -> bytes:
    layer_slots = list(config.layer_ids) + [-1] * (MAX_LAYERS - config.n_layers)
    return (
        struct.pack(
            _HEADER_FMT,
            magic,
            FORMAT_VERSION,
            0 if config.mode == MODE_FULL else 1,
            config.dim,
            config.n_layers,
            config.bits,
            0,
            config.seed,
            record_count,
            index_offset,
            slots,
            *layer_slots,
        )
        + b"\x00" * _HEADER_PAD
    )


def _unpack_header(raw: bytes, expected_magic: bytes, path) -> tuple[StoreConfig, int, int, int]:
    if len(raw) < HEADER_SIZE:
        raise StoreFormatError(f"{path}: truncated header")
    fields = struct.unpack(_HEADER_FMT, raw[: struct.calcsize(_HEADER_FMT)])
    magic, version, mode_code, dim, n_layers, bits, _res, seed, count, index_off, slots = fields[:11]
    layer_ids = tuple(x for x in fields[11:] if x >= 0)[:n_layers]
    if magic != expected_magic:
        raise StoreFormatError(f"{path}: bad magic {magic!r}, expected {expected_magic!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"{path}: unsupported format version {version}")
    if len(layer_ids) != n_layers:
        raise StoreFormatError(f"{path}: corrupt layer id table")
    config = StoreConfig(
        mode=MODE_FULL if mode_code == 0 else MODE_LSH,
        dim=dim,
        layer_ids=layer_ids,
        bits=bits,
        seed=seed,
    )
    return config, count, index_off, slots


def _build_store(
    path: str | Path,
    magic: bytes,
    config: StoreConfig,
    records: Iterator[tuple[str, bytes]],
) -> int:
    """Stream framed records to disk, then the index, then the final header."""
    entries: list[tuple[int, int]] = []
    seen: set[str] = set()
    with open(path, "wb") as out:
        out.write(b"\x00" * HEADER_SIZE)
        offset = HEADER_SIZE
        for key, payload in records:
            if key in seen:
                raise ValueError(f"duplicate key {key!r} during store build")
            seen.add(key)
            frame = struct.pack("<I", len(payload)) + payload
            out.write(frame)
            entries.append((_fnv1a64(key.encode("utf-8")), offset))
            offset += len(frame)

        slots = 8
        while slots < 2 * max(1, len(entries)):
            slots *= 2
        table = np.zeros(slots, dtype=[("hash", "<u8"), ("offset", "<u8")])
        mask = slots - 1
        for key_hash, rec_offset in entries:
            idx = key_hash & mask
            while table["offset"][idx] != 0:
                idx = (idx + 1) & mask
            table["hash"][idx] = key_hash
            table["offset"][idx] = rec_offset
        index_offset = offset
        out.write(table.tobytes())
        out.seek(0)
        out.write(_pack_header(magic, config, len(entries), index_offset, slots))
    return len(entries)


class _Store:
    """Read-only handle; fetches use positional reads and are thread-safe."""

    _magic: bytes = b""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            header = os.pread(self._fd, HEADER_SIZE, 0)
            self.config, self.record_count, self._index_offset, slots = _unpack_header(
                header, self._magic, self.path
            )
            index_bytes = os.pread(self._fd, slots * 16, self._index_offset)
            table = np.frombuffer(index_bytes, dtype=[("hash", "<u8"), ("offset", "<u8")])
            if table.size != slots:
                raise StoreFormatError(f"{self.path}: truncated index")
            self._hashes = table["hash"]
            self._offsets = table["offset"]
            self._mask = slots - 1
        except Exception:
            os.close(self._fd)
            raise

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _read_frame(self, offset: int) -> memoryview:
        (length,) = struct.unpack("<I", os.pread(self._fd, 4, offset))
        return memoryview(os.pread(self._fd, length, offset + 4))

    def _find(self, key: str) -> memoryview | None:
        key_hash = _fnv1a64(key.encode("utf-8"))
        raw_key = key.encode("utf-8")
        idx = key_hash & self._mask
        for _ in range(self._mask + 1):
            offset = int(self._offsets[idx])
            if offset == 0:
                return None
            if int(self._hashes[idx]) == key_hash:
                frame = self._read_frame(offset)
                (key_len,) = struct.unpack_from("<I", frame, 0)
                if bytes(frame[4 : 4 + key_len]) == raw_key:
                    return frame
            idx = (idx + 1) & self._mask
        return None

    def _iter_frames(self) -> Iterator[memoryview]:
        offset = HEADER_SIZE
        while offset < self._index_offset:
            frame = self._read_frame(offset)
            yield frame
            offset += 4 + len(frame)

    def keys(self) -> list[str]:
        out = []
        for frame in self._iter_frames():
            (key_len,) = struct.unpack_from("<I", frame, 0)
            out.append(bytes(frame[4 : 4 + key_len]).decode("utf-8"))
        return out


class DocStore(_Store):
    _magic = DOC_MAGIC

    def fetch(self, doc_id: str) -> DocumentRecord:
        frame = self._find(doc_id)
        if frame is None:
            raise DocumentNotFoundError(doc_id)
        return _decode_doc_record(frame, self.config)

    def __contains__(self, doc_id: str) -> bool:
        return self._find(doc_id) is not None

    def records(self) -> Iterator[DocumentRecord]:
        for frame in self._iter_frames():
            yield _decode_doc_record(frame, self.config)


class TokenStore(_Store):
    _magic = TOKEN_MAGIC

    def fetch(self, group_id: str) -> TokenGroupEmbedding | None:
        frame = self._find(group_id)
        if frame is None:
            return None
        return _decode_group_record(frame, self.config)[1]

    def records(self) -> Iterator[tuple[str, TokenGroupEmbedding]]:
        for frame in self._iter_frames():
            yield _decode_group_record(frame, self.config)


def build_doc_store(export: EncoderExport, config: StoreConfig, path: str | Path) -> int:
    """Ingest every export document; returns the record count."""
    if export.dim != config.dim:
        raise ConfigMismatchError(f"export dim {export.dim} != configured dim {config.dim}")
    planes = config.planes() if config.mode == MODE_LSH else None

    def frames() -> Iterator[tuple[str, bytes]]:
        for doc in export.documents:
            record = ingest_document(doc, export.layer_ids, config, planes)
            yield record.doc_id, _encode_doc_record(record, config)

    return _build_store(path, DOC_MAGIC, config, frames())


def build_token_store(export: EncoderExport, config: StoreConfig, path: str | Path) -> int:
    if export.dim != config.dim:
        raise ConfigMismatchError(f"export dim {export.dim} != configured dim {config.dim}")
    planes = config.planes() if config.mode == MODE_LSH else None
    indices = None

    def frames() -> Iterator[tuple[str, bytes]]:
        nonlocal indices
        for group in export.groups:
            if indices is None:
                indices = select_layer_indices(export.layer_ids, config.layer_ids)
            selected = group.vectors[:, indices, :].astype(np.float32, copy=False)
            if config.mode == MODE_LSH:
                members, n_layers, dim = selected.shape
                words = footprint_batch(selected.reshape(-1, dim), planes).reshape(
                    members, n_layers, config.words
                )
                emb = TokenGroupEmbedding(footprints=words, bits=config.bits)
            else:
                emb = TokenGroupEmbedding(vectors=selected)
            yield group.group_id, _encode_group_record(group.group_id, emb, config)

    return _build_store(path, TOKEN_MAGIC, config, frames())


def open_doc_store(path: str | Path, expect: StoreConfig | None = None) -> DocStore:
    store = DocStore(path)
    if expect is not None and store.config != expect:
        store.close()
        raise ConfigMismatchError(
            f"{path}: store config {store.config} != expected {expect}"
        )
    return store


def open_token_store(path: str | Path, expect: StoreConfig | None = None) -> TokenStore:
    store = TokenStore(path)
    if expect is not None and store.config != expect:
        store.close()
        raise ConfigMismatchError(
            f"{path}: store config {store.config} != expected {expect}"
        )
    return store


# ----------------------------------------------------------------------------
# storage cost calculator
# ----------------------------------------------------------------------------


def storage_estimate(
    target: str,
    mode: str,
    *,
    m: float = 0,
    layers: int = 0,
    kept_layers: int = 0,
    bits: int = 0,
    doc_count: float = 0,
    unigram_count: float = 0,
    pair_count: float = 0,
    dim: int = 768,
) -> int:
    """Closed-form store sizes in bytes (payload only, headers excluded).

    documents/original:   4 * (m * L + 1) * p * D
    documents/compressed: (m * L' * b/8 + 4p) * D
    tokens/original:      4 * L * (V + 2H) * p
    tokens/compressed:    L' * (V + 2H) * b/8
    """
    if target not in ("documents", "tokens"):
        raise ValueError(f"target must be 'documents' or 'tokens', got {target!r}")
    if mode not in ("original", "compressed"):
        raise ValueError(f"mode must be 'original' or 'compressed', got {mode!r}")

    def positive(**params: float) -> None:
        for name, value in params.items():
            if value <= 0:
                raise ValueError(f"{target}/{mode} estimate needs positive {name}")

    if target == "documents":
        if mode == "original":
            positive(m=m, layers=layers, doc_count=doc_count, dim=dim)
            return round(4 * (m * layers + 1) * dim * doc_count)
        positive(m=m, kept_layers=kept_layers, bits=bits, doc_count=doc_count, dim=dim)
        return round((m * kept_layers * bits / 8 + 4 * dim) * doc_count)
    vocab = unigram_count + 2 * pair_count
    if mode == "original":
        positive(layers=layers, vocab=vocab, dim=dim)
        return round(4 * layers * vocab * dim)
    positive(kept_layers=kept_layers, bits=bits, vocab=vocab)
    return round(kept_layers * vocab * bits / 8)


def format_bytes(n: int) -> str:
    """Decimal units, one decimal place, matching storage-table conventions."""
    for unit, scale in (("PB", 1e15), ("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("KB", 1e3)):
        if n >= scale:
            return f"{n / scale:.1f} {unit}"
    return f"{n} B"
