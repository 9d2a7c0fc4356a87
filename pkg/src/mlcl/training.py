"""Adam training of the joint contrastive + BCE objective, early stopping, and alpha grid search."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .data import Dataset, batch_iterator
from .errors import ConfigError, NonFiniteError, ShapeError
from .evaluation import evaluate
from .losses import (
    Batch,
    JaccardMode,
    LossConfig,
    LossKind,
    bce_loss,
    combined_objective,
    contrastive_loss,
)
from .model import EncoderParams, forward_batch, init_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 10
    alpha: float = 0.0
    tau: float = 1.0
    loss_kind: str = "none"
    jaccard_weight_mode: str = "outside"
    seed: int = 0
    threshold: float = 0.5
    dim: int = 32
    init_scale: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate", f"must be positive, got {self.learning_rate!r}")
        for name in ("batch_size", "dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)!r}")
        for name in ("max_epochs", "patience"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold", f"must lie in (0, 1), got {self.threshold!r}")
        if not self.init_scale > 0:
            raise ConfigError("init_scale", f"must be positive, got {self.init_scale!r}")
        try:
            LossKind(self.loss_kind)
        except ValueError:
            raise ConfigError("loss_kind", f"unknown loss {self.loss_kind!r}") from None
        try:
            JaccardMode(self.jaccard_weight_mode)
        except ValueError:
            raise ConfigError("jaccard_weight_mode", f"unknown mode {self.jaccard_weight_mode!r}") from None
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(
            tau=self.tau,
            alpha=self.alpha,
            loss_kind=LossKind(self.loss_kind),
            jaccard_weight_mode=JaccardMode(self.jaccard_weight_mode),
        )

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown training-config field")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Bias-corrected Adam update applied to ``params`` in place."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    cl_component: float
    bce_component: float
    val_micro_f1: float
    val_macro_f1: float
    val_jaccard: float


@dataclass
class TrainResult:
    params: EncoderParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def best_val_macro_f1(self) -> float | None:
        if self.best_epoch is None:
            return None
        return self.history[self.best_epoch].val_macro_f1


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def batch_objective(params: EncoderParams, dataset: Dataset, indices, loss_cfg: LossConfig):
    """Forward one batch on the active tape; returns (total, cl, bce) tensors."""
    out = forward_batch(params, dataset.token_lists(indices))
    golds = dataset.label_sets(indices)
    bce = bce_loss(out.probabilities, golds)
    kind = loss_cfg.loss_kind
    usable = len(indices) >= 2 or kind is LossKind.ICL
    if loss_cfg.alpha > 0 and kind is not LossKind.NONE and usable:
        batch = Batch(out.sentence_vector, golds, out.label_matrix, out.probabilities)
        cl = contrastive_loss(batch, loss_cfg)
    else:
        cl = Tensor(0.0)
    return combined_objective(cl, bce, loss_cfg.alpha), cl, bce


def train(
    params: EncoderParams,
    train_set: Dataset,
    valid_set: Dataset,
    cfg: TrainConfig,
    loss_cfg: LossConfig | None = None,
) -> TrainResult:
    """Optimise a copy of ``params``; the returned params are from the best validation epoch.

    Model selection uses validation macro-F1.  Training stops once it has not
    improved for ``cfg.patience`` consecutive epochs.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ShapeError("train and validation splits must be non-empty")
    loss_cfg = loss_cfg or cfg.loss_config()
    params = params.copy()
    result = TrainResult(params.copy())
    if cfg.max_epochs == 0:
        return result
    tensors = params.tensors()
    state = AdamState.zeros_like([t.data for t in tensors])
    best = -math.inf
    stale = 0
    for epoch in range(cfg.max_epochs):
        totals = np.zeros(3)
        batches = batch_iterator(len(train_set), cfg.batch_size, seed=_epoch_seed(cfg.seed, epoch))
        for b, idx in enumerate(batches):
            try:
                with Tape() as tape:
                    loss, cl, bce = batch_objective(params, train_set, idx, loss_cfg)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}") from exc
            if not math.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss, tensors)
            adam_step([t.data for t in tensors], grads, state, lr=cfg.learning_rate)
            totals += (loss.item(), cl.item(), bce.item())
        totals /= len(batches)
        val = evaluate(params, valid_set, cfg.threshold, with_ch=False)
        result.history.append(
            EpochRecord(epoch, *map(float, totals), val.micro_f1, val.macro_f1, val.jaccard_score)
        )
        log.debug("epoch %d loss %.6f val macro-F1 %.4f", epoch, totals[0], val.macro_f1)
        if val.macro_f1 > best:
            best = val.macro_f1
            result.best_epoch = epoch
            result.params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return result


@dataclass
class GridRow:
    alpha: float
    best_epoch: int | None
    val_micro_f1: float
    val_macro_f1: float
    val_jaccard: float


def grid_search_alpha(
    alphas: Sequence[float],
    train_set: Dataset,
    valid_set: Dataset,
    cfg: TrainConfig,
    params: EncoderParams | None = None,
    workers: int = 1,
) -> tuple[list[GridRow], float]:
    """Train once per alpha from identical initial params; best alpha maximises val macro-F1.

    Ties go to the smaller alpha.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigError("alphas", "empty alpha list")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ConfigError("alphas", f"{a} outside [0, 1]")
    if params is None:
        params = init_params(cfg.seed, train_set.vocab_size, train_set.n_labels, cfg.dim, cfg.init_scale)

    def run(alpha: float) -> GridRow:
        arm = dataclasses.replace(cfg, alpha=alpha)
        res = train(params, train_set, valid_set, arm)
        if res.best_epoch is None:
            rep = evaluate(res.params, valid_set, cfg.threshold, with_ch=False)
            return GridRow(alpha, None, rep.micro_f1, rep.macro_f1, rep.jaccard_score)
        rec = res.history[res.best_epoch]
        return GridRow(alpha, res.best_epoch, rec.val_micro_f1, rec.val_macro_f1, rec.val_jaccard)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, alphas))
    else:
        rows = [run(a) for a in alphas]
    best = min(rows, key=lambda r: (-r.val_macro_f1, r.alpha))
    return rows, best.alpha
