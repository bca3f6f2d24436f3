"""Sign-footprint hashing and RBF kernel pooling.

Dense term embeddings are compressed to b-bit footprints by taking the sign of
b random-hyperplane projections. Footprints are packed into 64-bit words so
Hamming distances reduce to xor plus popcount, and the classic SimHash
estimator cos(pi * h / b) recovers an approximate cosine. A bank of Gaussian
kernels then pools a row of similarities into soft-match counts in log space.

Hyperplanes are never serialized. Stores persist only (seed, bits, dim) and
regenerate the planes on open, so the generator here must stay reproducible
across platforms: we use numpy's Philox counter-based generator with its
ziggurat standard-normal sampler.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64

# Lower bound applied to every sigma before pooling or training so a collapsed
# kernel cannot divide by ~0.
SIGMA_MIN = 1e-3


class ZeroNormWarning(RuntimeWarning):
    """Exact cosine was asked to compare against a zero-norm vector."""


def _check_bits(bits: int) -> None:
    if bits <= 0 or bits % WORD_BITS != 0:
        raise ValueError(
            f"bit width must be a positive multiple of {WORD_BITS}, got {bits}"
        )


# ----------------------------------------------------------------------------
# hyperplanes and footprints
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperplaneSet:
    """b random hyperplanes in R^p, regenerable from (seed, bits, dim)."""

    seed: int
    planes: np.ndarray = field(repr=False)

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def dim(self) -> int:
        return self.planes.shape[1]


def sample_hyperplanes(seed: int, bits: int, dim: int) -> HyperplaneSet:
    """Draw `bits` standard-normal hyperplanes of dimension `dim`.

    Deterministic for fixed (seed, bits, dim): Philox4x64 keyed by the seed,
    normals via numpy's ziggurat implementation.
    """
    _check_bits(bits)
    if dim <= 0:
        raise ValueError(f"embedding dimension must be positive, got {dim}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    planes = rng.standard_normal((bits, dim), dtype=np.float32)
    return HyperplaneSet(seed=seed, planes=planes)


@dataclass(eq=False)
class LshFootprint:
    """A b-bit sign footprint packed into uint64 words.

    Bit i lives at words[i // 64] >> (i % 64); bit i is 1 iff the source
    vector had a strictly positive dot product with hyperplane i.
    """

    words: np.ndarray
    bits: int

    def __post_init__(self) -> None:
        _check_bits(self.bits)
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.words.shape != (self.bits // WORD_BITS,):
            raise ValueError(
                f"expected {self.bits // WORD_BITS} words for {self.bits} bits, "
                f"got shape {self.words.shape}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LshFootprint):
            return NotImplemented
        return self.bits == other.bits and bool(np.array_equal(self.words, other.words))

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def complement(self) -> "LshFootprint":
        return LshFootprint(words=~self.words, bits=self.bits)


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack a (..., b) boolean sign array into (..., b/64) uint64 words."""
    packed = np.packbits(signs, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64)


def unpack_words(words: np.ndarray, bits: int) -> np.ndarray:
    """Inverse of pack_signs; returns a (..., bits) uint8 0/1 array."""
    as_bytes = np.ascontiguousarray(words).view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., :bits]


def footprint_batch(vectors: np.ndarray, planes: HyperplaneSet) -> np.ndarray:
    """Footprints for a (..., p) stack of vectors, as (..., b/64) uint64 words."""
    vectors = np.asarray(vectors)
    if vectors.shape[-1] != planes.dim:
        raise ValueError(
            f"vector dimension {vectors.shape[-1]} does not match planes ({planes.dim})"
        )
    dots = vectors.astype(np.float32, copy=False) @ planes.planes.T
    return pack_signs(dots > 0)


def lsh_footprint(v: np.ndarray, planes: HyperplaneSet) -> LshFootprint:
    """Sign footprint of a single vector."""
    words = footprint_batch(np.asarray(v).reshape(1, -1), planes)[0]
    return LshFootprint(words=words, bits=planes.bits)


def hamming_words(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distances between broadcastable uint64 word arrays.

    Sums popcounts over the trailing word axis, so shapes (..., W) x (..., W)
    give (...,) int64 counts.
    """
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def hamming(a: LshFootprint, b: LshFootprint) -> int:
    if a.bits != b.bits:
        raise ValueError(f"footprint widths differ: {a.bits} vs {b.bits}")
    return int(hamming_words(a.words, b.words))


def cosine_from_hamming(h: np.ndarray | int, bits: int) -> np.ndarray | float:
    """SimHash cosine estimate cos(pi * h / bits); works elementwise."""
    return np.cos(np.pi * np.asarray(h, dtype=np.float64) / bits)


def cosine_estimate(a: LshFootprint, b: LshFootprint) -> float:
    return float(cosine_from_hamming(hamming(a, b), a.bits))


def cosine_exact(u: np.ndarray, v: np.ndarray) -> float:
    """Exact cosine similarity, clipped to [-1, 1] against rounding spill.

    A zero-norm operand has no direction; the result is defined as 0.0 and a
    ZeroNormWarning is emitted so callers can tell the degenerate case from a
    true orthogonal pair.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("zero-norm vector in cosine_exact", ZeroNormWarning, stacklevel=2)
        return 0.0
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


# ----------------------------------------------------------------------------
# kernel pooling
# ----------------------------------------------------------------------------


@dataclass
class KernelBank:
    """K Gaussian kernels (mu_k, sigma_k) used to pool similarity rows."""

    mus: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        self.mus = np.atleast_1d(np.asarray(self.mus, dtype=np.float64))
        self.sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=np.float64))
        if self.mus.ndim != 1 or self.mus.shape != self.sigmas.shape:
            raise ValueError(
                f"mus and sigmas must be equal-length 1-d arrays, got "
                f"{self.mus.shape} and {self.sigmas.shape}"
            )
        if self.mus.size < 1:
            raise ValueError("kernel bank needs at least one kernel")
        if not (np.isfinite(self.mus).all() and np.isfinite(self.sigmas).all()):
            raise ValueError("kernel parameters must be finite")
        if (self.sigmas <= 0).any():
            raise ValueError("kernel widths must be positive")

    @property
    def size(self) -> int:
        return int(self.mus.size)

    def effective_sigmas(self) -> np.ndarray:
        """Widths with the sigma floor applied."""
        return np.maximum(self.sigmas, SIGMA_MIN)

    @classmethod
    def default(cls, count: int = 11, sigma: float = 0.1) -> "KernelBank":
        """Training initialization: centers evenly spaced on [-0.9, 1.0]."""
        return cls(mus=np.linspace(-0.9, 1.0, count), sigmas=np.full(count, sigma))

    def copy(self) -> "KernelBank":
        return KernelBank(mus=self.mus.copy(), sigmas=self.sigmas.copy())


def kernel_exponents(similarities: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Per-kernel log-space terms -(c_j - mu_k)^2 / (2 sigma_k^2).

    Input (..., m) similarities give a (..., m, K) array. Similarities are
    clamped to [-1, 1] first; LSH estimates are in range by construction but
    exact cosines can spill past 1 by rounding.
    """
    c = np.clip(np.asarray(similarities, dtype=np.float64), -1.0, 1.0)
    sig = bank.effective_sigmas()
    diff = c[..., None] - bank.mus
    return -(diff * diff) / (2.0 * sig * sig)


def kernel_pool_grid(similarities: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Pool (..., m) similarity rows into (..., K) log soft-match counts.

    s_k = log sum_j exp(-(c_j - mu_k)^2 / (2 sigma_k^2)), evaluated with a
    stable log-sum-exp over j. Kernels are processed one at a time so the
    working set stays at row size instead of row size times K; the reranking
    loop lives inside this function.
    """
    similarities = np.asarray(similarities)
    if similarities.shape[-1] == 0:
        raise ValueError("kernel_pool needs at least one similarity (m >= 1)")
    # order="C" so the pooled axis is contiguous even for transposed views.
    c = similarities.astype(np.float64, order="C", copy=True)
    np.clip(c, -1.0, 1.0, out=c)
    sig = bank.effective_sigmas()
    out = np.empty(c.shape[:-1] + (bank.size,))
    buf = np.empty_like(c)
    for k in range(bank.size):
        np.subtract(c, bank.mus[k], out=buf)
        np.multiply(buf, buf, out=buf)
        buf *= -1.0 / (2.0 * sig[k] * sig[k])
        shift = buf.max(axis=-1, keepdims=True)
        np.subtract(buf, shift, out=buf)
        np.exp(buf, out=buf)
        out[..., k] = np.log(buf.sum(axis=-1)) + shift[..., 0]
    return out


def kernel_pool(similarities: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Pool one similarity row of length m into K values."""
    similarities = np.asarray(similarities, dtype=np.float64)
    if similarities.ndim != 1:
        raise ValueError(f"expected a 1-d similarity row, got shape {similarities.shape}")
    return kernel_pool_grid(similarities, bank)
