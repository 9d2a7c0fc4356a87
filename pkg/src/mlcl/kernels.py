"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The backend is chosen once at import from the ``MLCL_BACKEND`` environment
variable (``numba`` or ``numpy``; default ``numba`` when importable) and can
be switched at runtime with :func:`set_backend`.  Both paths compute the same
quantities; they are not required to agree bitwise.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    name = os.environ.get("MLCL_BACKEND", "numba").strip().lower()
    if name not in _BACKENDS:
        raise ValueError(f"MLCL_BACKEND must be one of {_BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# Bag-of-embeddings mean pooling
# ---------------------------------------------------------------------------


@_njit
def _bag_mean_nb(table, ids, offsets):
    n_bags = offsets.shape[0] - 1
    d = table.shape[1]
    out = np.zeros((n_bags, d))
    for b in range(n_bags):
        start = offsets[b]
        stop = offsets[b + 1]
        for t in range(start, stop):
            row = ids[t]
            for c in range(d):
                out[b, c] += table[row, c]
        count = stop - start
        for c in range(d):
            out[b, c] /= count
    return out


@_njit
def _bag_mean_backward_nb(grad_out, ids, offsets, n_rows):
    n_bags = offsets.shape[0] - 1
    d = grad_out.shape[1]
    grad = np.zeros((n_rows, d))
    for b in range(n_bags):
        start = offsets[b]
        stop = offsets[b + 1]
        count = stop - start
        for t in range(start, stop):
            row = ids[t]
            for c in range(d):
                grad[row, c] += grad_out[b, c] / count
    return grad


def _bag_mean_np(table, ids, offsets):
    counts = np.diff(offsets)
    sums = np.add.reduceat(table[ids], offsets[:-1], axis=0)
    return sums / counts[:, None]


def _bag_mean_backward_np(grad_out, ids, offsets, n_rows):
    counts = np.diff(offsets)
    per_token = np.repeat(grad_out / counts[:, None], counts, axis=0)
    grad = np.zeros((n_rows, grad_out.shape[1]))
    np.add.at(grad, ids, per_token)
    return grad


def bag_mean(table: np.ndarray, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Mean of ``table[ids[offsets[b]:offsets[b+1]]]`` for every bag ``b``.

    Every bag must be non-empty.
    """
    if _backend == "numba":
        return _bag_mean_nb(table, ids, offsets)
    return _bag_mean_np(table, ids, offsets)


def bag_mean_backward(grad_out, ids, offsets, n_rows: int) -> np.ndarray:
    if _backend == "numba":
        return _bag_mean_backward_nb(grad_out, ids, offsets, n_rows)
    return _bag_mean_backward_np(grad_out, ids, offsets, n_rows)


# ---------------------------------------------------------------------------
# Log-softmax over the last axis with the diagonal entry excluded
# ---------------------------------------------------------------------------


@_njit
def _offdiag_log_softmax_nb(z):
    n_blocks, n, _ = z.shape
    out = np.zeros_like(z)
    for b in range(n_blocks):
        for i in range(n):
            m = -np.inf
            for k in range(n):
                if k != i and z[b, i, k] > m:
                    m = z[b, i, k]
            acc = 0.0
            for k in range(n):
                if k != i:
                    acc += np.exp(z[b, i, k] - m)
            lse = m + np.log(acc)
            for k in range(n):
                if k != i:
                    out[b, i, k] = z[b, i, k] - lse
    return out


@_njit
def _offdiag_log_softmax_backward_nb(grad_out, logp):
    n_blocks, n, _ = logp.shape
    grad = np.zeros_like(logp)
    for b in range(n_blocks):
        for i in range(n):
            total = 0.0
            for k in range(n):
                if k != i:
                    total += grad_out[b, i, k]
            for k in range(n):
                if k != i:
                    grad[b, i, k] = grad_out[b, i, k] - np.exp(logp[b, i, k]) * total
    return grad


def _offdiag_log_softmax_np(z):
    n = z.shape[-1]
    eye = np.eye(n, dtype=bool)
    masked = np.where(eye, -np.inf, z)
    m = masked.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(masked - m).sum(axis=-1, keepdims=True))
    return np.where(eye, 0.0, z - lse)


def _offdiag_log_softmax_backward_np(grad_out, logp):
    n = logp.shape[-1]
    eye = np.eye(n, dtype=bool)
    g = np.where(eye, 0.0, grad_out)
    probs = np.where(eye, 0.0, np.exp(logp))
    return g - probs * g.sum(axis=-1, keepdims=True)


def offdiag_log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of ``z`` (shape ``(B, n, n)``) skipping ``z[b, i, i]``.

    Diagonal outputs are 0 and carry no meaning.  Requires ``n >= 2``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if _backend == "numba":
        return _offdiag_log_softmax_nb(z)
    return _offdiag_log_softmax_np(z)


def offdiag_log_softmax_backward(grad_out: np.ndarray, logp: np.ndarray) -> np.ndarray:
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    if _backend == "numba":
        return _offdiag_log_softmax_backward_nb(grad_out, logp)
    return _offdiag_log_softmax_backward_np(grad_out, logp)


# ---------------------------------------------------------------------------
# Cluster scatter sums
# ---------------------------------------------------------------------------


@_njit
def _cluster_scatter_nb(points, cluster_ids, n_clusters):
    n, d = points.shape
    counts = np.zeros(n_clusters)
    centroids = np.zeros((n_clusters, d))
    for i in range(n):
        c = cluster_ids[i]
        counts[c] += 1.0
        for j in range(d):
            centroids[c, j] += points[i, j]
    for c in range(n_clusters):
        for j in range(d):
            centroids[c, j] /= counts[c]
    mean = np.zeros(d)
    for i in range(n):
        for j in range(d):
            mean[j] += points[i, j]
    for j in range(d):
        mean[j] /= n
    within = 0.0
    for i in range(n):
        c = cluster_ids[i]
        for j in range(d):
            diff = points[i, j] - centroids[c, j]
            within += diff * diff
    between = 0.0
    for c in range(n_clusters):
        s = 0.0
        for j in range(d):
            diff = centroids[c, j] - mean[j]
            s += diff * diff
        between += counts[c] * s
    return between, within


def _cluster_scatter_np(points, cluster_ids, n_clusters):
    counts = np.bincount(cluster_ids, minlength=n_clusters).astype(np.float64)
    sums = np.zeros((n_clusters, points.shape[1]))
    np.add.at(sums, cluster_ids, points)
    centroids = sums / counts[:, None]
    mean = points.mean(axis=0)
    within = float(((points - centroids[cluster_ids]) ** 2).sum())
    between = float((counts * ((centroids - mean) ** 2).sum(axis=1)).sum())
    return between, within


def cluster_scatter(points: np.ndarray, cluster_ids: np.ndarray, n_clusters: int):
    """Between- and within-cluster sums of squares.

    ``cluster_ids`` must be dense integers in ``[0, n_clusters)`` with every
    cluster populated.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    cluster_ids = np.ascontiguousarray(cluster_ids, dtype=np.int64)
    if _backend == "numba":
        between, within = _cluster_scatter_nb(points, cluster_ids, n_clusters)
        return float(between), float(within)
    return _cluster_scatter_np(points, cluster_ids, n_clusters)
