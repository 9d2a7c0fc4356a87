"""Finite-difference verification of every loss w.r.t. all encoder parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, finite_difference_gradient, gradient_errors
from .losses import (
    Batch,
    JaccardMode,
    LabelSet,
    LossConfig,
    LossKind,
    bce_loss,
    combined_objective,
    contrastive_loss,
)
from .model import PARAM_NAMES, EncoderParams, forward_batch, init_params

TARGETS = ("scl", "jscl", "jscl_inside", "jspcl", "slcl", "icl", "bce", "combined")


@dataclass
class ParamCheck:
    target: str
    param: str
    max_rel_error: float
    max_abs_error: float
    ok: bool


@dataclass
class Problem:
    params: EncoderParams
    sequences: list[list[int]]
    label_sets: list[LabelSet]


def random_problem(seed: int, k: int = 8, n_labels: int = 4, dim: int = 8, vocab: int = 20) -> Problem:
    """Random encoder plus a batch whose label sets repeat, overlap, and include multi-label rows."""
    rng = np.random.default_rng(seed)
    params = init_params(seed, vocab, n_labels, dim, scale=0.5)
    sequences = [list(rng.integers(0, vocab, size=int(rng.integers(1, 6)))) for _ in range(k)]
    pool = []
    for p in range(3):
        size = 2 if p == 0 else int(rng.integers(1, n_labels + 1))
        pool.append(sorted(rng.choice(n_labels, size=size, replace=False).tolist()))
    label_sets = [LabelSet.from_indices(pool[int(rng.integers(len(pool)))], n_labels) for _ in range(k)]
    label_sets[0] = LabelSet.from_indices(pool[0], n_labels)
    label_sets[1] = LabelSet.from_indices(pool[0], n_labels)
    return Problem(params, sequences, label_sets)


def target_loss(target: str, problem: Problem, tau: float = 0.5, alpha: float = 0.3):
    """Evaluate ``target`` on the active tape (or untaped when no tape is open)."""
    out = forward_batch(problem.params, problem.sequences)
    batch = Batch(out.sentence_vector, problem.label_sets, out.label_matrix, out.probabilities)
    if target == "bce":
        return bce_loss(out.probabilities, problem.label_sets)
    if target == "combined":
        cfg = LossConfig(tau=tau, alpha=alpha, loss_kind=LossKind.SCL)
        bce = bce_loss(out.probabilities, problem.label_sets)
        return combined_objective(contrastive_loss(batch, cfg), bce, alpha)
    mode = JaccardMode.OUTSIDE_LOG
    kind = target
    if target == "jscl_inside":
        kind, mode = "jscl", JaccardMode.INSIDE_LOG
    cfg = LossConfig(tau=tau, loss_kind=LossKind(kind), jaccard_weight_mode=mode)
    return contrastive_loss(batch, cfg)


def check_target(
    target: str, seed: int, step: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7, **dims
) -> list[ParamCheck]:
    problem = random_problem(seed, **dims)
    tensors = problem.params.tensors()
    with Tape() as tape:
        loss = target_loss(target, problem)
    analytic = [g.copy() for g in tape.backward(loss, tensors)]
    numeric = finite_difference_gradient(lambda: target_loss(target, problem).item(), tensors, step)
    rows = []
    for name, a, n in zip(PARAM_NAMES, analytic, numeric):
        rel, abs_, ok = gradient_errors(a, n, rtol, atol)
        rows.append(ParamCheck(target, name, rel, abs_, ok))
    return rows
