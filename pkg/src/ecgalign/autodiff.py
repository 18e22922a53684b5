"""Minimal reverse-mode automatic differentiation over numpy arrays.

A dynamic tape is rebuilt on every forward pass: each op returns a new
``Tensor`` holding its value, its parents, and a closure producing the
parents' gradient contributions. ``backward`` walks the tape once in reverse
topological order. Nodes whose inputs carry no gradient are not recorded, so
constant subgraphs cost nothing on the backward pass.

Everything is dtype-polymorphic: float64 for verification, float32 for
training. Execution is single-threaded and deterministic (no nondeterministic
reductions; fixed iteration order).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

GradFn = Callable[[np.ndarray], tuple]


class Tensor:
    """An n-d array with an optional gradient and a place on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn) -> Tensor:
    out = Tensor(data)
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
            break
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable Tensor."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._grad_fn is None or node.grad is None:
            continue
        contributions = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, contributions):
            if g is None or not parent.requires_grad:
                continue
            # first contribution is adopted by reference; accumulation always
            # allocates a fresh array, so a shared buffer is never mutated
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * a.data.dtype.type(c)

    def grad_fn(g):
        return (g * a.data.dtype.type(c),)

    return _node(data, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; both operands 2-D, or both 3-D with equal batch."""
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ValueError(f"matmul expects matching 2-D or 3-D operands, "
                         f"got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), grad_fn)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = np.transpose(a.data, axes)
    inv = [0] * len(axes)
    for i, ax in enumerate(axes):
        inv[ax] = i

    def grad_fn(g):
        return (np.transpose(g, inv),)

    return _node(data, (a,), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    data = a.data.reshape(tuple(shape))

    def grad_fn(g):
        return (g.reshape(a.data.shape),)

    return _node(data, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(data, tuple(tensors), grad_fn)


def gather(a: Tensor, indices) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(data, (a,), grad_fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sel = tuple(slice(None) if i != axis else slice(start, stop)
                for i in range(a.ndim))
    data = np.ascontiguousarray(a.data[sel])

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[sel] = g
        return (ga,)

    return _node(data, (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def grad_fn(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)

    return _node(data, (a,), grad_fn)


def mean_pool(a: Tensor, axis: int) -> Tensor:
    """Mean over one axis; doubles as the pooling primitive."""
    n = a.data.shape[axis]
    if n == 0:
        raise ValueError("mean_pool over empty axis")
    data = a.data.mean(axis=axis)

    def grad_fn(g):
        ge = np.expand_dims(g, axis) / a.data.dtype.type(n)
        return (np.broadcast_to(ge, a.data.shape).astype(a.data.dtype, copy=True),)

    return _node(data, (a,), grad_fn)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean / unit-variance over the last axis, before any affine."""
    xhat, rstd = kernels.layer_norm_fwd(a.data, eps)

    def grad_fn(g):
        return (kernels.layer_norm_bwd(xhat, rstd, g),)

    return _node(xhat, (a,), grad_fn)


def gelu(a: Tensor) -> Tensor:
    data = kernels.gelu_fwd(a.data)

    def grad_fn(g):
        return (kernels.gelu_bwd(a.data, g),)

    return _node(data, (a,), grad_fn)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (transpose first for any other axis)."""
    y = kernels.softmax_fwd(a.data)

    def grad_fn(g):
        return (kernels.softmax_bwd(y, g),)

    return _node(y, (a,), grad_fn)


def logsumexp(a: Tensor) -> Tensor:
    """Stable log-sum-exp over the last axis."""
    if a.shape[-1] == 0:
        raise ValueError("logsumexp over empty axis")
    m = np.max(a.data, axis=-1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(a.data - m), axis=-1, keepdims=True))

    def grad_fn(g):
        soft = np.exp(a.data - lse)
        return (soft * g[..., None],)

    return _node(lse[..., 0], (a,), grad_fn)


def l2_normalize(a: Tensor) -> Tensor:
    """Row-wise unit normalization over the last axis."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("l2_normalize: zero-norm row")
    y = a.data / norm

    def grad_fn(g):
        inner = np.sum(g * y, axis=-1, keepdims=True)
        return ((g - y * inner) / norm,)

    return _node(y, (a,), grad_fn)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on raw logits (log-sum-exp form)."""
    t = np.asarray(targets, dtype=logits.dtype)
    x = logits.data
    data = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def grad_fn(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return ((sig - t) * g,)

    return _node(data, (logits,), grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def stack_rows(tensors: Iterable[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor."""
    rows = [reshape(t, (1, t.shape[-1])) for t in tensors]
    return concat(rows, axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Plain-array sigmoid for inference-time probabilities."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
