"""Contrastive losses for multi-label classification, BCE, and the joint objective.

Every contrastive loss here reduces to one shape: per-block similarity logits
``z = sim / tau``, an off-diagonal log-softmax over each row, and a fixed
non-negative weight matrix saying how much each (anchor, candidate) log-prob
counts.  The weight matrices encode the positive-set definitions and all the
normalisations, so the differentiable part is shared by all five losses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    BatchTooSmallError,
    ConfigError,
    LabelSpaceTooSmallError,
    MLCLError,
    NonFiniteError,
    ShapeError,
)


class LossKind(str, enum.Enum):
    SCL = "scl"
    JSCL = "jscl"
    JSPCL = "jspcl"
    SLCL = "slcl"
    ICL = "icl"
    NONE = "none"


class JaccardMode(str, enum.Enum):
    OUTSIDE_LOG = "outside"
    INSIDE_LOG = "inside"


@dataclass(frozen=True)
class LabelSet:
    """Fixed-width bitset over the label space; bit ``j`` set means label ``j`` is active."""

    mask: int
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ShapeError("label width must be >= 1")
        if self.mask < 0 or self.mask >> self.width:
            raise ShapeError(f"mask {self.mask:#x} does not fit in {self.width} bits")

    @classmethod
    def from_indices(cls, indices, width: int) -> "LabelSet":
        mask = 0
        for j in indices:
            if not 0 <= j < width:
                raise ShapeError(f"label index {j} outside [0, {width})")
            mask |= 1 << int(j)
        return cls(mask, width)

    @classmethod
    def from_array(cls, bits) -> "LabelSet":
        bits = np.asarray(bits)
        return cls.from_indices(np.flatnonzero(bits), bits.shape[0])

    def indices(self) -> list[int]:
        return [j for j in range(self.width) if self.mask >> j & 1]

    def to_array(self) -> np.ndarray:
        return np.array([self.mask >> j & 1 for j in range(self.width)], dtype=np.float64)

    def __contains__(self, j: int) -> bool:
        return bool(self.mask >> j & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")


def label_matrix(label_sets: Sequence[LabelSet] | np.ndarray) -> np.ndarray:
    """Stack label sets into a ``(K, l)`` float 0/1 matrix (arrays pass through)."""
    if isinstance(label_sets, np.ndarray):
        return label_sets.astype(np.float64)
    if not label_sets:
        raise ShapeError("no label sets")
    width = label_sets[0].width
    if any(ls.width != width for ls in label_sets):
        raise ShapeError("label sets of different widths")
    return np.stack([ls.to_array() for ls in label_sets])


def jaccard_coefficient(a: LabelSet, b: LabelSet) -> float:
    if a.width != b.width:
        raise ShapeError(f"label widths differ: {a.width} vs {b.width}")
    union = a.mask | b.mask
    if union == 0:
        raise MLCLError("Jaccard coefficient undefined for two empty label sets")
    return bin(a.mask & b.mask).count("1") / bin(union).count("1")


@dataclass
class Batch:
    """Model outputs for ``K`` samples plus their gold label sets.

    ``label_embeddings`` and ``probabilities`` may be omitted when the chosen
    loss does not need them.
    """

    sentence_embeddings: Tensor
    label_sets: Sequence[LabelSet]
    label_embeddings: Tensor | None = None
    probabilities: Tensor | None = None

    def __post_init__(self):
        k = self.sentence_embeddings.shape[0]
        if k < 1:
            raise ShapeError("empty batch")
        if len(self.label_sets) != k:
            raise ShapeError(f"{len(self.label_sets)} label sets for {k} samples")
        self.labels = label_matrix(self.label_sets)
        l = self.labels.shape[1]
        if self.label_embeddings is not None and self.label_embeddings.shape[:2] != (k, l):
            raise ShapeError(f"label_embeddings shape {self.label_embeddings.shape} != ({k}, {l}, d)")
        if self.probabilities is not None:
            if self.probabilities.shape != (k, l):
                raise ShapeError(f"probabilities shape {self.probabilities.shape} != ({k}, {l})")

    @property
    def size(self) -> int:
        return self.sentence_embeddings.shape[0]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    alpha: float = 0.0
    loss_kind: LossKind = LossKind.NONE
    jaccard_weight_mode: JaccardMode = JaccardMode.OUTSIDE_LOG

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "jaccard_weight_mode", JaccardMode(self.jaccard_weight_mode))
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError("tau", f"must be a positive finite number, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha", f"must lie in [0, 1], got {self.alpha}")


# ---------------------------------------------------------------------------
# weight matrices (no gradients flow through these)
# ---------------------------------------------------------------------------


def pairwise_jaccard(labels: np.ndarray) -> np.ndarray:
    inter = labels @ labels.T
    sizes = labels.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    if np.any(union == 0):
        raise MLCLError("Jaccard coefficient undefined for two empty label sets")
    return inter / union


def _finalize(weights: np.ndarray, contributing: np.ndarray) -> np.ndarray:
    n = int(contributing.sum())
    if n == 0:
        return np.zeros_like(weights)
    return weights / n


def scl_weights(labels: np.ndarray) -> np.ndarray:
    k = labels.shape[0]
    same = np.all(labels[:, None, :] == labels[None, :, :], axis=-1).astype(np.float64)
    np.fill_diagonal(same, 0.0)
    counts = same.sum(axis=1)
    contributing = counts > 0
    w = np.divide(same, counts[:, None], out=np.zeros((k, k)), where=contributing[:, None])
    return _finalize(w, contributing)


def jscl_weights(labels: np.ndarray, mode: JaccardMode) -> tuple[np.ndarray, float]:
    """Return (weights, additive constant) for the Jaccard-weighted losses.

    The constant is non-zero only in INSIDE_LOG mode, where the log of the
    Jaccard factor separates into a term with no gradient.
    """
    k = labels.shape[0]
    jac = pairwise_jaccard(labels)
    np.fill_diagonal(jac, 0.0)
    contributing = jac.sum(axis=1) > 0
    if mode is JaccardMode.OUTSIDE_LOG:
        return _finalize(jac / (k - 1), contributing), 0.0
    pos = jac > 0
    w = _finalize(pos / (k - 1), contributing)
    const = -float((w[pos] * np.log(jac[pos])).sum())
    return w, const


def slcl_weights(labels: np.ndarray) -> np.ndarray:
    k = labels.shape[0]
    # others[i, j]: samples other than i carrying label j
    others = labels.sum(axis=0)[None, :] - labels
    valid = (labels > 0) & (others > 0)
    per_label = np.divide(valid, others, out=np.zeros_like(others), where=valid)
    w = per_label @ labels.T
    np.fill_diagonal(w, 0.0)
    q = valid.sum(axis=1)
    contributing = q > 0
    w = np.divide(w, q[:, None], out=np.zeros((k, k)), where=contributing[:, None])
    return _finalize(w, contributing)


def icl_weights(labels: np.ndarray) -> np.ndarray:
    k, l = labels.shape
    sizes = labels.sum(axis=1)
    contributing = sizes >= 2
    w = labels[:, :, None] * labels[:, None, :]
    idx = np.arange(l)
    w[:, idx, idx] = 0.0
    denom = np.where(contributing, sizes * (sizes - 1), 1.0)
    w = w * (contributing / denom)[:, None, None]
    return _finalize(w, contributing)


def _weighted_contrast(features: Tensor, weights: np.ndarray, tau: float, const: float = 0.0) -> Tensor:
    if not weights.any():
        return Tensor(const)
    logits = ad.scale(ad.cosine_matrix(features), 1.0 / tau)
    logp = ad.offdiag_log_softmax(logits)
    loss = ad.scale(ad.sum_(ad.mul(weights, logp)), -1.0)
    return ad.add(loss, const) if const else loss


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _require_pairs(batch: Batch) -> None:
    if batch.size < 2:
        raise BatchTooSmallError(f"contrastive loss needs K >= 2, got {batch.size}")


def scl_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Strict contrast: positives share the anchor's exact label set."""
    _require_pairs(batch)
    return _weighted_contrast(batch.sentence_embeddings, scl_weights(batch.labels), cfg.tau)


def jscl_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Every other sample is a candidate, weighted by label-set Jaccard overlap."""
    _require_pairs(batch)
    w, const = jscl_weights(batch.labels, cfg.jaccard_weight_mode)
    return _weighted_contrast(batch.sentence_embeddings, w, cfg.tau, const)


def jspcl_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """:func:`jscl_loss` computed on the probability rows instead of sentence vectors."""
    _require_pairs(batch)
    if batch.probabilities is None:
        raise ShapeError("jspcl_loss needs batch.probabilities")
    w, const = jscl_weights(batch.labels, cfg.jaccard_weight_mode)
    return _weighted_contrast(batch.probabilities, w, cfg.tau, const)


def slcl_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Per-label contrast averaged over the anchor's labels that have partners."""
    _require_pairs(batch)
    return _weighted_contrast(batch.sentence_embeddings, slcl_weights(batch.labels), cfg.tau)


def icl_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Contrast among the label representations inside each sample.

    For a sample's active label ``j`` the other active labels are positives and
    all remaining label rows of that sample form the denominator.
    """
    if batch.n_labels < 2:
        raise LabelSpaceTooSmallError(f"ICL needs at least 2 labels, got {batch.n_labels}")
    if batch.label_embeddings is None:
        raise ShapeError("icl_loss needs batch.label_embeddings")
    return _weighted_contrast(batch.label_embeddings, icl_weights(batch.labels), cfg.tau)


def bce_loss(probabilities: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over all ``K * l`` entries."""
    probabilities = ad.as_tensor(probabilities)
    p = probabilities.data
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("non-finite probabilities")
    if np.any(~(p > 0.0)) or np.any(~(p < 1.0)):
        raise MLCLError("probabilities must lie strictly inside (0, 1)")
    y = label_matrix(targets)
    if y.shape != p.shape:
        raise ShapeError(f"targets shape {y.shape} != probabilities shape {p.shape}")
    ll = ad.add(ad.mul(y, ad.log(probabilities)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, probabilities))))
    return ad.scale(ad.mean(ll), -1.0)


def combined_objective(cl: Tensor, bce: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha", f"must lie in [0, 1], got {alpha}")
    return ad.add(ad.scale(cl, alpha), ad.scale(bce, 1.0 - alpha))


LOSSES = {
    LossKind.SCL: scl_loss,
    LossKind.JSCL: jscl_loss,
    LossKind.JSPCL: jspcl_loss,
    LossKind.SLCL: slcl_loss,
    LossKind.ICL: icl_loss,
}


def contrastive_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Dispatch on ``cfg.loss_kind``; ``NONE`` yields a constant zero."""
    if cfg.loss_kind is LossKind.NONE:
        return Tensor(0.0)
    return LOSSES[cfg.loss_kind](batch, cfg)
