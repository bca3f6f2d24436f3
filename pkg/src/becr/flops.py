"""Operation-count model for the online scoring path.

Counts cover the deep interaction pipeline only (similarity, kernel pooling,
and the weighted combination); lexical features and stored scalars are
negligible at any realistic configuration. Conventions, fixed so ratios
between configurations are the meaningful output:

  * a fused multiply-add counts as 2 floating-point ops
  * XOR plus popcount on one 64-bit footprint word counts as 1 word op
  * per similarity value each kernel costs 5 ops (subtract, square, scale,
    exponential, accumulate); the final log costs 1 per pooled cell
  * exact cosine costs 2p for the dot product plus 2 for normalize and clamp,
    per document position per layer
  * footprint estimates cost 4 ops per group per position per layer beyond
    the word ops (angle scale, cosine, member weight, accumulate)

Every category is linear in the term count and the layer count, so doubling
either scales the total exactly; there is no fixed overhead term.
"""

from __future__ import annotations

from dataclasses import dataclass

MODES = ("full", "lsh")

KERNEL_OPS_PER_VALUE = 5
LSH_COMBINE_OPS = 4
FMA_OPS = 2
NORM_CLAMP_OPS = 2


@dataclass(frozen=True)
class FlopModel:
    """Scoring workload shape: n query terms against m positions, L' layers."""

    mode: str
    n_terms: int
    doc_len: int
    n_layers: int
    dim: int = 768
    n_kernels: int = 11
    bits: int = 256
    groups_per_term: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("n_terms", "doc_len", "n_layers", "dim", "n_kernels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.bits < 0 or self.bits % 64:
            raise ValueError("bits must be a non-negative multiple of 64")
        if self.groups_per_term < 1:
            raise ValueError("groups_per_term must be >= 1")


@dataclass(frozen=True)
class FlopBreakdown:
    similarity: int
    popcount: int
    kernel: int
    linear: int

    @property
    def total(self) -> int:
        return self.similarity + self.popcount + self.kernel + self.linear

    def as_dict(self) -> dict[str, int]:
        return {
            "similarity": self.similarity,
            "popcount": self.popcount,
            "kernel": self.kernel,
            "linear": self.linear,
            "total": self.total,
        }


def flop_count(model: FlopModel) -> FlopBreakdown:
    """Per-document operation counts for one query under the model."""
    cells = model.n_terms * model.doc_len * model.n_layers
    if model.mode == "full":
        similarity = cells * (FMA_OPS * model.dim + NORM_CLAMP_OPS)
        popcount = 0
    else:
        words = model.bits // 64
        popcount = int(round(cells * model.groups_per_term * words))
        similarity = int(round(cells * model.groups_per_term * LSH_COMBINE_OPS))
    kernel = cells * model.n_kernels * KERNEL_OPS_PER_VALUE + (
        model.n_terms * model.n_layers * model.n_kernels
    )
    linear = FMA_OPS * model.n_terms * model.n_kernels * model.n_layers
    return FlopBreakdown(
        similarity=int(similarity),
        popcount=int(popcount),
        kernel=int(kernel),
        linear=int(linear),
    )
