"""Pairwise training of every non-encoder parameter.

The loss per (positive, negative) pair is -log softmax over the two scores,
log(1 + exp(s_neg - s_pos)). Gradients flow analytically through the additive
score: linear blocks (alpha, beta, cls projection, gamma, biases) see their
features directly, and the kernel centers and widths see the soft-match
posterior over document positions, since

    d/d mu_k  log sum_j e_j = sum_j p_j (c_j - mu_k) / sigma_k^2

with p the softmax of the kernel exponents over positions. Everything the
gradient needs besides the weights is a pure function of (query, document,
store), so a FeatureCache pulls similarity rows, lexical features, and the
stored document scalars once per pair and the optimizer loop never touches
the stores again. Kernel parameters move between steps; the cached rows make
re-pooling cheap.

Optimization is deliberately plain: seeded epoch shuffles consumed in
fixed-size batches, plain SGD or adaptive moments, a hard floor on kernel
widths with outward gradients projected to zero at the boundary, and a
non-finite-loss abort. Given the same seed the whole run is bit-for-bit
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.special import expit

from becr.compose import ComposeConfig, decompose_config, resolve_term_groups, tokenize
from becr.core import SIGMA_MIN, KernelBank, kernel_exponents
from becr.lexical import CorpusStats, assemble_lexical_features
from becr.scoring import (
    COMPONENT_DEEP,
    COMPONENT_LEXICAL,
    COMPONENT_OTHERS,
    COMPONENTS,
    ModelWeights,
    similarity_rows,
)
from becr.stores import DocStore, TokenStore, require_compatible

OPTIMIZER_ADAPTIVE = "adaptive-moments"
OPTIMIZER_SGD = "plain-sgd"
OPTIMIZERS = (OPTIMIZER_ADAPTIVE, OPTIMIZER_SGD)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


# ----------------------------------------------------------------------------
# pairs
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingPair:
    qid: str
    positive: str
    negative: str

    def __post_init__(self) -> None:
        if self.positive == self.negative:
            raise ValueError(
                f"pair for query {self.qid!r} uses {self.positive!r} on both sides"
            )


def read_pairs(path: str | Path) -> list[TrainingPair]:
    """Parse tab-separated "qid<TAB>pos<TAB>neg" lines; blank lines skipped."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"{path}:{lineno}: expected qid<TAB>pos<TAB>neg, got {line!r}"
            )
        try:
            pairs.append(TrainingPair(*parts))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def write_pairs(path: str | Path, pairs: Sequence[TrainingPair]) -> None:
    lines = [f"{p.qid}\t{p.positive}\t{p.negative}" for p in pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    iterations: int = 100
    batch_size: int = 32
    seed: int = 0
    sigma_min: float = SIGMA_MIN
    optimizer: str = OPTIMIZER_ADAPTIVE
    frozen_components: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}"
            )
        for name in self.frozen_components:
            if name not in COMPONENTS:
                raise ValueError(
                    f"unknown component {name!r}, expected one of {COMPONENTS}"
                )


# ----------------------------------------------------------------------------
# cached per-(query, document) features
# ----------------------------------------------------------------------------


@dataclass
class DocFeatures:
    """Weight-independent inputs for one (query, document) score."""

    sims: np.ndarray  # (n, L', m)
    lexical: np.ndarray  # (F,)
    cls_vector: np.ndarray  # (p,)
    others: dict[str, float]


class FeatureCache:
    """Feature pulls keyed by (qid, doc_id), shared across the whole run.

    Queries are planned once. Entries are immutable, so the same cache can
    back gradient computation, accuracy counting, and finite-difference
    probes without re-reading the stores.
    """

    def __init__(
        self,
        queries: Mapping[str, str],
        doc_store: DocStore,
        token_store: TokenStore,
        corpus_stats: CorpusStats,
        schema,
        compose_config: ComposeConfig | None = None,
    ):
        require_compatible(doc_store.config, token_store.config)
        self.queries = dict(queries)
        self.doc_store = doc_store
        self.token_store = token_store
        self.corpus_stats = corpus_stats
        self.schema = schema
        self.compose_config = compose_config if compose_config is not None else ComposeConfig()
        self.mode = doc_store.config.mode
        self.bits = doc_store.config.bits
        self._plans: dict[str, tuple[list, list]] = {}
        self._features: dict[tuple[str, str], DocFeatures] = {}

    def _plan(self, qid: str):
        if qid not in self._plans:
            if qid not in self.queries:
                raise KeyError(f"query id {qid!r} is not in the supplied query set")
            terms = tokenize(self.queries[qid])
            group_set = decompose_config(terms, self.compose_config)
            resolved = [
                resolve_term_groups(t, group_set, self.token_store.fetch) for t in terms
            ]
            self._plans[qid] = (terms, resolved)
        return self._plans[qid]

    def get(self, qid: str, doc_id: str) -> DocFeatures:
        key = (qid, doc_id)
        if key not in self._features:
            terms, resolved = self._plan(qid)
            record = self.doc_store.fetch(doc_id)
            sims = similarity_rows(resolved, record, self.mode, self.bits)
            lexical = assemble_lexical_features(
                [t.text for t in terms],
                record.field_stats,
                self.corpus_stats,
                self.schema,
            )
            others = {
                name: record.other_features.get(name, 0.0) for name in record.other_features
            }
            self._features[key] = DocFeatures(
                sims=sims,
                lexical=lexical,
                cls_vector=record.cls_vector.astype(np.float64),
                others=others,
            )
        return self._features[key]


# ----------------------------------------------------------------------------
# loss, score, gradients
# ----------------------------------------------------------------------------


def pair_loss(score_pos: float, score_neg: float) -> float:
    """-log softmax of the positive score over the pair, computed stably."""
    return float(np.logaddexp(0.0, score_neg - score_pos))


@dataclass
class GradientSet:
    """One array per ModelWeights block, shaped exactly like it."""

    mus: np.ndarray
    sigmas: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    cls_projection: np.ndarray
    gamma: dict[str, float]
    bias_deep: float
    bias_lexical: float
    bias_others: float


def _pool_with_partials(sims: np.ndarray, kernels: KernelBank):
    """Pooled grid (n, L', K) plus its partials in mu_k and sigma_k."""
    exponents = kernel_exponents(sims, kernels)  # (n, L', m, K)
    peak = exponents.max(axis=-2, keepdims=True)
    shifted = np.exp(exponents - peak)
    total = shifted.sum(axis=-2)
    grid = np.squeeze(peak, axis=-2) + np.log(total)
    posterior = shifted / total[..., None, :]
    sig = kernels.effective_sigmas()
    diff = np.clip(sims, -1.0, 1.0)[..., None] - kernels.mus
    d_mu = (posterior * diff).sum(axis=-2) / (sig * sig)
    d_sigma = (posterior * diff * diff).sum(axis=-2) / (sig * sig * sig)
    # below the width floor the effective sigma is constant, so the true
    # derivative in the raw parameter is zero
    d_sigma = d_sigma * (kernels.sigmas >= SIGMA_MIN)
    return grid, d_mu, d_sigma


def _score_parts(weights: ModelWeights, f: DocFeatures):
    grid, d_mu_pool, d_sigma_pool = _pool_with_partials(f.sims, weights.kernels)
    n = grid.shape[0]
    per_term = np.einsum("kl,nlk->n", weights.alpha, grid) + weights.bias_deep / n
    deep = float(per_term.sum())
    lexical = float(weights.beta @ f.lexical + weights.bias_lexical)
    others = float(weights.cls_projection @ f.cls_vector) + weights.bias_others
    for name, w in weights.gamma.items():
        others += w * f.others.get(name, 0.0)
    return deep + lexical + others, grid, d_mu_pool, d_sigma_pool


def score_features(weights: ModelWeights, f: DocFeatures) -> float:
    """Composite score from cached features; matches Scorer arithmetic."""
    total, _, _, _ = _score_parts(weights, f)
    return total


def _score_gradient(weights: ModelWeights, f: DocFeatures):
    total, grid, d_mu_pool, d_sigma_pool = _score_parts(weights, f)
    grads = GradientSet(
        mus=np.einsum("kl,nlk->k", weights.alpha, d_mu_pool),
        sigmas=np.einsum("kl,nlk->k", weights.alpha, d_sigma_pool),
        alpha=grid.sum(axis=0).T,
        beta=f.lexical.copy(),
        cls_projection=f.cls_vector.copy(),
        gamma={name: f.others.get(name, 0.0) for name in weights.gamma},
        bias_deep=1.0,
        bias_lexical=1.0,
        bias_others=1.0,
    )
    return total, grads


def gradients(
    pair: TrainingPair,
    weights: ModelWeights,
    cache: FeatureCache,
    sigma_min: float = SIGMA_MIN,
) -> tuple[float, GradientSet]:
    """Loss and d loss / d theta for every parameter block.

    Widths sitting at the sigma_min floor get their outward (shrinking)
    gradient projected to zero, so a descent step never crosses the clamp.
    """
    s_pos, g_pos = _score_gradient(weights, cache.get(pair.qid, pair.positive))
    s_neg, g_neg = _score_gradient(weights, cache.get(pair.qid, pair.negative))
    margin = s_neg - s_pos
    loss = float(np.logaddexp(0.0, margin))
    scale = float(expit(margin))
    d_sigmas = scale * (g_neg.sigmas - g_pos.sigmas)
    at_floor = weights.kernels.sigmas <= sigma_min
    d_sigmas[at_floor & (d_sigmas > 0)] = 0.0
    grad = GradientSet(
        mus=scale * (g_neg.mus - g_pos.mus),
        sigmas=d_sigmas,
        alpha=scale * (g_neg.alpha - g_pos.alpha),
        beta=scale * (g_neg.beta - g_pos.beta),
        cls_projection=scale * (g_neg.cls_projection - g_pos.cls_projection),
        gamma={
            name: scale * (g_neg.gamma[name] - g_pos.gamma[name]) for name in weights.gamma
        },
        # a shared bias cancels in the margin, so its pairwise gradient is
        # exactly zero
        bias_deep=0.0,
        bias_lexical=0.0,
        bias_others=0.0,
    )
    return loss, grad


# ----------------------------------------------------------------------------
# flat parameter view for the optimizer
# ----------------------------------------------------------------------------


class _Packer:
    """Fixed flat layout over every trainable block of a ModelWeights."""

    def __init__(self, weights: ModelWeights):
        self.k = weights.kernels.size
        self.alpha_shape = weights.alpha.shape
        self.beta_size = weights.beta.size
        self.cls_size = weights.cls_projection.size
        self.gamma_names = sorted(weights.gamma)
        sizes = [
            self.k,
            self.k,
            int(np.prod(self.alpha_shape)),
            self.beta_size,
            self.cls_size,
            len(self.gamma_names),
            3,
        ]
        bounds = np.cumsum([0] + sizes)
        names = ("mus", "sigmas", "alpha", "beta", "cls", "gamma", "biases")
        self.slices = {
            name: slice(int(a), int(b)) for name, a, b in zip(names, bounds, bounds[1:])
        }
        self.size = int(bounds[-1])

    def pack(self, weights: ModelWeights) -> np.ndarray:
        x = np.empty(self.size)
        x[self.slices["mus"]] = weights.kernels.mus
        x[self.slices["sigmas"]] = weights.kernels.sigmas
        x[self.slices["alpha"]] = weights.alpha.ravel()
        x[self.slices["beta"]] = weights.beta
        x[self.slices["cls"]] = weights.cls_projection
        x[self.slices["gamma"]] = [weights.gamma[n] for n in self.gamma_names]
        x[self.slices["biases"]] = (
            weights.bias_deep,
            weights.bias_lexical,
            weights.bias_others,
        )
        return x

    def pack_grad(self, grad: GradientSet) -> np.ndarray:
        x = np.empty(self.size)
        x[self.slices["mus"]] = grad.mus
        x[self.slices["sigmas"]] = grad.sigmas
        x[self.slices["alpha"]] = grad.alpha.ravel()
        x[self.slices["beta"]] = grad.beta
        x[self.slices["cls"]] = grad.cls_projection
        x[self.slices["gamma"]] = [grad.gamma[n] for n in self.gamma_names]
        x[self.slices["biases"]] = (grad.bias_deep, grad.bias_lexical, grad.bias_others)
        return x

    def unpack(self, x: np.ndarray, template: ModelWeights) -> ModelWeights:
        biases = x[self.slices["biases"]]
        return ModelWeights(
            kernels=KernelBank(
                mus=x[self.slices["mus"]].copy(),
                sigmas=x[self.slices["sigmas"]].copy(),
            ),
            alpha=x[self.slices["alpha"]].reshape(self.alpha_shape).copy(),
            beta=x[self.slices["beta"]].copy(),
            cls_projection=x[self.slices["cls"]].copy(),
            gamma=dict(zip(self.gamma_names, x[self.slices["gamma"]].tolist())),
            bias_deep=float(biases[0]),
            bias_lexical=float(biases[1]),
            bias_others=float(biases[2]),
            schema=template.schema,
        )

    def frozen_mask(self, frozen: Sequence[str]) -> np.ndarray:
        """1 where the parameter trains, 0 where its component is frozen."""
        mask = np.ones(self.size)
        bias_base = self.slices["biases"].start
        if COMPONENT_DEEP in frozen:
            for name in ("mus", "sigmas", "alpha"):
                mask[self.slices[name]] = 0.0
            mask[bias_base] = 0.0
        if COMPONENT_LEXICAL in frozen:
            mask[self.slices["beta"]] = 0.0
            mask[bias_base + 1] = 0.0
        if COMPONENT_OTHERS in frozen:
            mask[self.slices["cls"]] = 0.0
            mask[self.slices["gamma"]] = 0.0
            mask[bias_base + 2] = 0.0
        return mask


# ----------------------------------------------------------------------------
# the training loop
# ----------------------------------------------------------------------------


@dataclass
class TrainResult:
    weights: ModelWeights
    trace: list[tuple[int, float]] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - size + 1, size):
            yield order[start : start + size]


def mean_loss(
    weights: ModelWeights, pairs: Sequence[TrainingPair], cache: FeatureCache
) -> float:
    scores = [
        pair_loss(
            score_features(weights, cache.get(p.qid, p.positive)),
            score_features(weights, cache.get(p.qid, p.negative)),
        )
        for p in pairs
    ]
    return float(np.mean(scores))


def pair_accuracy(
    weights: ModelWeights, pairs: Sequence[TrainingPair], cache: FeatureCache
) -> float:
    """Fraction of pairs the model orders correctly (strictly positive margin)."""
    hits = 0
    for p in pairs:
        s_pos = score_features(weights, cache.get(p.qid, p.positive))
        s_neg = score_features(weights, cache.get(p.qid, p.negative))
        hits += s_pos > s_neg
    return hits / len(pairs)


def train(
    pairs: Sequence[TrainingPair],
    weights: ModelWeights,
    config: TrainConfig,
    cache: FeatureCache,
) -> TrainResult:
    """Run config.iterations batch steps; deterministic given config.seed."""
    if not pairs:
        raise ValueError("training needs at least one pair")
    current = weights.copy()
    if config.iterations == 0:
        return TrainResult(weights=current, trace=[])
    current.kernels.sigmas = np.maximum(current.kernels.sigmas, config.sigma_min)

    packer = _Packer(current)
    mask = packer.frozen_mask(config.frozen_components)
    x = packer.pack(current)
    sig = packer.slices["sigmas"]

    rng = np.random.default_rng(config.seed)
    batches = _batches(len(pairs), config.batch_size, rng)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    trace: list[tuple[int, float]] = []

    for step in range(1, config.iterations + 1):
        batch = next(batches)
        grad = np.zeros_like(x)
        loss_total = 0.0
        for idx in batch:
            loss, g = gradients(pairs[idx], current, cache, config.sigma_min)
            loss_total += loss
            grad += packer.pack_grad(g)
        batch_loss = loss_total / len(batch)
        if not np.isfinite(batch_loss):
            raise TrainingDivergedError(
                f"loss {batch_loss} at iteration {step}; lower the learning rate"
            )
        grad *= mask / len(batch)

        if config.optimizer == OPTIMIZER_ADAPTIVE:
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad * grad
            m_hat = m / (1 - beta1**step)
            v_hat = v / (1 - beta2**step)
            x = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        else:
            x = x - config.learning_rate * grad
        x[sig] = np.maximum(x[sig], config.sigma_min)
        current = packer.unpack(x, current)
        trace.append((step, batch_loss))
    return TrainResult(weights=current, trace=trace)


def write_loss_trace(path: str | Path, trace: Sequence[tuple[int, float]]) -> None:
    lines = ["iter,loss"] + [f"{i},{loss:.10g}" for i, loss in trace]
    Path(path).write_text("\n".join(lines) + "\n")
