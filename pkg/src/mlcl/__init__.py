"""Contrastive losses for multi-label text classification."""

from .autodiff import Tape, Tensor, backward, finite_difference_gradient
from .losses import (
    Batch,
    JaccardMode,
    LabelSet,
    LossConfig,
    LossKind,
    bce_loss,
    combined_objective,
    icl_loss,
    jaccard_coefficient,
    jscl_loss,
    jspcl_loss,
    scl_loss,
    slcl_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "JaccardMode",
    "LabelSet",
    "LossConfig",
    "LossKind",
    "Tape",
    "Tensor",
    "backward",
    "bce_loss",
    "combined_objective",
    "finite_difference_gradient",
    "icl_loss",
    "jaccard_coefficient",
    "jscl_loss",
    "jspcl_loss",
    "scl_loss",
    "slcl_loss",
]
