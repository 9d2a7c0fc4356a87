"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` whenever one of their
inputs requires a gradient.  Outside a ``with Tape():`` block nothing is
recorded, which is how evaluation code runs.

>>> p = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = (p * p).sum()
>>> tape.backward(loss, [p])[0]
array([2., 4.])
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateVectorError,
    EmptyInputError,
    NonFiniteError,
    NonScalarError,
    ShapeError,
)

NORM_EPS = 1e-12

_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tape")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered log of recorded operations.

    A tape belongs to the thread that opened it.  Replaying adjoints walks the
    log in exact reverse order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        out.tape = self
        self.nodes.append(_Node(out, inputs, vjp))

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray]:
        """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

        Gradients are recomputed from scratch, so repeated calls return
        identical values.  Leaves recorded on this tape (and any ``params``)
        that ``loss`` does not depend on receive zeros.  Returns the gradients
        of ``params`` in order.
        """
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise NonScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        produced = {id(node.out) for node in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = adjoint.pop(id(node.out), None)
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in produced:
                    leaves[id(inp)] = inp
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = adjoint.get(key)
            leaf.grad = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64)
        out = []
        for p in params or ():
            g = adjoint.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else np.array(g, dtype=np.float64)
            out.append(p.grad)
        return out


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray]:
    """Run :meth:`Tape.backward` on the tape that recorded ``loss``."""
    if loss.data.ndim != 0:
        raise NonScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        for p in params or ():
            p.grad = np.ones_like(p.data) if p is loss else np.zeros_like(p.data)
        return [p.grad for p in params or ()]
    return loss.tape.backward(loss, params)


# ---------------------------------------------------------------------------
# recording helpers
# ---------------------------------------------------------------------------


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, inputs, vjp)
        else:
            out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a plain (non-differentiable) scalar."""
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # exp(-|x|) never overflows; pick the matching branch by sign
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0:
        raise EmptyInputError("mean of an empty tensor")
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1: int = -1, ax2: int = -2) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.expand_dims(a.data, axis), (a,), lambda g: (np.squeeze(g, axis=axis),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy semantics for ndim >= 2 operands or a 1-D ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2:
        raise ShapeError("matmul needs a left operand with ndim >= 2")
    if bd.ndim == 1:
        def vjp(g):
            ga = g[..., None] * bd
            gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
            return ga, gb

        return _make(ad @ bd, (a, b), vjp)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), vjp)


# ---------------------------------------------------------------------------
# numerically careful building blocks for the losses
# ---------------------------------------------------------------------------


def log_sum_exp(xs, axis: int = -1) -> Tensor:
    """``log(sum(exp(xs)))`` along ``axis`` using a max shift."""
    xs = as_tensor(xs)
    if xs.data.size == 0:
        raise EmptyInputError("log_sum_exp of an empty tensor")
    x = xs.data
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    soft = np.exp(x - lse)
    return _make(np.squeeze(lse, axis=axis), (xs,), lambda g: (np.expand_dims(g, axis) * soft,))


def l2_normalize(x, eps: float = NORM_EPS) -> Tensor:
    """Scale each vector along the last axis to unit length.

    Raises :class:`DegenerateVectorError` if any norm is ``<= eps``.
    """
    x = as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norms <= eps):
        raise DegenerateVectorError(f"vector norm <= {eps:g}")
    y = x.data / norms
    return _make(y, (x,), lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norms,))


def cosine_similarity(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape or a.shape[0] < 1:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    return sum_(l2_normalize(a) * l2_normalize(b))


def cosine_matrix(x) -> Tensor:
    """Pairwise cosine similarities of the rows in ``x`` (shape ``(..., n, d)``)."""
    u = l2_normalize(x)
    return matmul(u, swapaxes(u))


def offdiag_log_softmax(z) -> Tensor:
    """Row-wise log-softmax over ``k != i`` for ``z`` of shape ``(n, n)`` or ``(B, n, n)``."""
    z = as_tensor(z)
    squeeze = z.ndim == 2
    data = z.data[None] if squeeze else z.data
    if data.ndim != 3 or data.shape[1] != data.shape[2]:
        raise ShapeError(f"offdiag_log_softmax needs square blocks, got {z.shape}")
    if data.shape[1] < 2:
        raise EmptyInputError("off-diagonal softmax needs at least 2 columns")
    logp = kernels.offdiag_log_softmax(data)

    def vjp(g):
        gg = g[None] if squeeze else g
        out = kernels.offdiag_log_softmax_backward(gg, logp)
        return (out[0] if squeeze else out,)

    return _make(logp[0] if squeeze else logp, (z,), vjp)


def bag_mean(table, ids: np.ndarray, offsets: np.ndarray) -> Tensor:
    """Mean-pool rows of ``table`` per bag; bag ``b`` is ``ids[offsets[b]:offsets[b+1]]``."""
    table = as_tensor(table)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    n_rows = table.shape[0]
    return _make(
        kernels.bag_mean(table.data, ids, offsets),
        (table,),
        lambda g: (kernels.bag_mean_backward(np.ascontiguousarray(g), ids, offsets, n_rows),),
    )


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def finite_difference_gradient(
    f: Callable[[], float], params: Sequence, step: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of ``f()`` w.r.t. each array in ``params``.

    ``params`` are perturbed in place (one coordinate at a time) and restored.
    Entries may be Tensors or float64 ndarrays.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        arr = p.data if isinstance(p, Tensor) else p
        flat = arr.reshape(-1)
        g = np.zeros(flat.shape)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f())
            flat[i] = orig - step
            lo = float(f())
            flat[i] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NonFiniteError(f"non-finite function value at coordinate {i}")
            g[i] = (hi - lo) / (2.0 * step)
        grads.append(g.reshape(arr.shape))
    return grads


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, rtol: float, atol: float):
    """Return (max relative error, max absolute error, ok) for one gradient pair.

    A coordinate passes when either its relative error is within ``rtol`` or its
    absolute error is within ``atol``.
    """
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    ok = bool(np.all((rel <= rtol) | (diff <= atol)))
    return float(rel.max(initial=0.0)), float(diff.max(initial=0.0)), ok
