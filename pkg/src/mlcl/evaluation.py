"""Multi-label metrics, Calinski-Harabasz analysis of the sentence space, and embedding export."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .data import Dataset
from .errors import ShapeError
from .losses import LabelSet, label_matrix
from .model import EncoderParams, forward_batch


class Dimension(str, enum.Enum):
    MULTI = "multi"
    SINGLE = "single"


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    jaccard_score: float
    per_label_f1: list[float]
    ch_multi: float | None = None
    ch_single: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


@dataclass
class ClusterAssignment:
    point_embeddings: np.ndarray
    cluster_ids: np.ndarray

    def __post_init__(self):
        self.point_embeddings = np.asarray(self.point_embeddings, dtype=np.float64)
        if self.point_embeddings.ndim == 1:
            self.point_embeddings = self.point_embeddings[:, None]
        self.cluster_ids = np.asarray(self.cluster_ids)
        if self.point_embeddings.ndim != 2:
            raise ShapeError("point_embeddings must be an (N, d) matrix")
        if self.cluster_ids.shape != (self.point_embeddings.shape[0],):
            raise ShapeError(
                f"{self.cluster_ids.shape[0] if self.cluster_ids.ndim else 0} cluster ids "
                f"for {self.point_embeddings.shape[0]} points"
            )


# ---------------------------------------------------------------------------
# classification metrics
# ---------------------------------------------------------------------------


def _pair(preds, golds) -> tuple[np.ndarray, np.ndarray]:
    p = label_matrix(preds) > 0
    g = label_matrix(golds) > 0
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} != gold shape {g.shape}")
    return p, g


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom, dtype=np.float64), where=denom > 0)


def per_label_f1(preds, golds) -> np.ndarray:
    p, g = _pair(preds, golds)
    tp = (p & g).sum(axis=0).astype(np.float64)
    fp = (p & ~g).sum(axis=0).astype(np.float64)
    fn = (~p & g).sum(axis=0).astype(np.float64)
    return _f1(tp, fp, fn)


def micro_f1(preds, golds) -> float:
    p, g = _pair(preds, golds)
    tp = float((p & g).sum())
    fp = float((p & ~g).sum())
    fn = float((~p & g).sum())
    return float(_f1(np.array(tp), np.array(fp), np.array(fn)))


def macro_f1(preds, golds) -> float:
    return float(per_label_f1(preds, golds).mean())


def jaccard_score(preds, golds) -> float:
    """Mean per-sample |pred & gold| / |pred | gold|; both-empty samples score 1."""
    p, g = _pair(preds, golds)
    inter = (p & g).sum(axis=1)
    union = (p | g).sum(axis=1)
    scores = np.divide(inter, union, out=np.ones(len(union)), where=union > 0)
    return float(scores.mean())


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


def calinski_harabasz(assignment: ClusterAssignment) -> float | None:
    """Between/within scatter ratio scaled by degrees of freedom.

    Returns ``None`` (undefined) with fewer than 2 clusters, one point per
    cluster, or zero within-cluster scatter.
    """
    x = assignment.point_embeddings
    _, ids = np.unique(assignment.cluster_ids, return_inverse=True)
    n = x.shape[0]
    k = int(ids.max()) + 1 if n else 0
    if k < 2 or k >= n:
        return None
    between, within = kernels.cluster_scatter(x, ids.reshape(-1), k)
    if within == 0.0:
        return None
    return (between / (k - 1)) / (within / (n - k))


def predict_probabilities(params: EncoderParams, dataset: Dataset, batch_size: int = 512) -> np.ndarray:
    chunks = []
    for start in range(0, len(dataset), batch_size):
        seqs = dataset.token_lists(range(start, min(start + batch_size, len(dataset))))
        chunks.append(forward_batch(params, seqs).probabilities.data)
    if not chunks:
        return np.zeros((0, params.n_labels))
    return np.concatenate(chunks)


def embed(params: EncoderParams, dataset: Dataset, batch_size: int = 512) -> np.ndarray:
    chunks = []
    for start in range(0, len(dataset), batch_size):
        seqs = dataset.token_lists(range(start, min(start + batch_size, len(dataset))))
        chunks.append(forward_batch(params, seqs).sentence_vector.data)
    if not chunks:
        return np.zeros((0, params.dim))
    return np.concatenate(chunks)


def binarize(probabilities: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return probabilities >= threshold


def predict_labelsets(params: EncoderParams, dataset: Dataset, threshold: float = 0.5) -> list[LabelSet]:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    bits = binarize(predict_probabilities(params, dataset), threshold)
    return [LabelSet.from_array(row) for row in bits]


def label_set_clusters(golds: np.ndarray, points: np.ndarray, dimension: Dimension) -> ClusterAssignment:
    """Group points by identical gold label set (MULTI) or single label (SINGLE).

    Clusters with fewer than two members are dropped.
    """
    golds = np.asarray(golds) > 0
    if Dimension(dimension) is Dimension.SINGLE:
        keep = golds.sum(axis=1) == 1
        golds, points = golds[keep], points[keep]
    if len(golds) == 0:
        return ClusterAssignment(np.zeros((0, points.shape[1])), np.zeros(0, dtype=np.int64))
    keys = golds.astype(np.int64) @ (1 << np.arange(golds.shape[1], dtype=np.int64))
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    keep = counts[inverse] >= 2
    return ClusterAssignment(points[keep], inverse[keep])


def semantic_space_analysis(params: EncoderParams, dataset: Dataset, dimension=Dimension.MULTI) -> float | None:
    """Calinski-Harabasz score of the sentence vectors grouped by gold labels."""
    if len(dataset) == 0:
        raise ShapeError("empty dataset")
    assignment = label_set_clusters(dataset.label_matrix(), embed(params, dataset), dimension)
    return calinski_harabasz(assignment)


def evaluate(params: EncoderParams, dataset: Dataset, threshold: float = 0.5, with_ch: bool = True) -> MetricsReport:
    golds = dataset.label_matrix()
    preds = binarize(predict_probabilities(params, dataset), threshold)
    report = MetricsReport(
        micro_f1=micro_f1(preds, golds),
        macro_f1=macro_f1(preds, golds),
        jaccard_score=jaccard_score(preds, golds),
        per_label_f1=[float(v) for v in per_label_f1(preds, golds)],
    )
    if with_ch:
        points = embed(params, dataset)
        report.ch_multi = calinski_harabasz(label_set_clusters(golds, points, Dimension.MULTI))
        report.ch_single = calinski_harabasz(label_set_clusters(golds, points, Dimension.SINGLE))
    return report


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------


def export_embeddings(params: EncoderParams, dataset: Dataset, path) -> None:
    """Write one tab-separated row per example: index, ``;``-joined labels, vector."""
    vectors = embed(params, dataset)
    header = ["index", "labels"] + [f"e{c}" for c in range(params.dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for i, (ex, vec) in enumerate(zip(dataset.examples, vectors)):
            names = ";".join(dataset.label_names[j] for j in ex.labels.indices())
            fh.write("\t".join([str(i), names] + [repr(float(v)) for v in vec]) + "\n")


def read_embeddings(path) -> tuple[list[int], list[list[str]], np.ndarray]:
    indices, labels, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            indices.append(int(parts[0]))
            labels.append(parts[1].split(";") if parts[1] else [])
            rows.append([float(v) for v in parts[2:]])
    return indices, labels, np.array(rows, dtype=np.float64)


def is_undefined(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def format_score(value) -> str:
    return "UNDEFINED" if is_undefined(value) else f"{value:.6f}"
