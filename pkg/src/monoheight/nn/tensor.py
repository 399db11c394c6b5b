"""A small reverse-mode differentiation engine over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them. ``Tensor.backward`` runs
those closures once each, in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DivergenceFault, EmptyBatch, LabelError, ShapeError
from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, grad: np.ndarray | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # a pre-bound buffer (e.g. a view into a flat parameter gradient)
        # is accumulated into in place
        self.grad = grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self, grad: np.ndarray | None = None) -> list["Tensor"]:
        """Back-propagate from this node; returns the visit order."""
        order = topological_order(self)
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        _accumulate(self, seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in order:
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise DivergenceFault(f"non-finite gradient at {node.op} node")
        return order

    # arithmetic helpers used by the loss-combination tests
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of every node reachable from root."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise DivergenceFault(f"non-finite activation from {op}")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    out.op = op
    out._parents = tuple(parents)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- ops ---------------------------------------------------------------------


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b for x [n, in], W [in, out], b [out]."""
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(f"dense expects 2-D x, 2-D W, 1-D b; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    out = _make(x.data @ W.data + b.data, (x, W, b), "dense")

    def backward():
        g = out.grad
        if x.requires_grad:
            _accumulate(x, g @ W.data.T)
        if W.requires_grad:
            _accumulate(W, x.data.T @ g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = _make(np.where(mask, x.data, 0.0), (x,), "relu")

    def backward():
        _accumulate(x, out.grad * mask)

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    nd = len(ref)
    ax = axis % nd
    for t in tensors[1:]:
        if len(t.shape) != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}")
    out = _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward():
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                _accumulate(t, out.grad[tuple(idx)])

    out._backward = backward
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = _make(x.data.reshape(shape), (x,), "reshape")

    def backward():
        _accumulate(x, out.grad.reshape(x.shape))

    out._backward = backward
    return out


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def conv2d(x: Tensor, kernels_: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid-padding cross-correlation: x [n, c, h, w], kernels [o, c, kh, kw]."""
    if stride not in (1, 2):
        raise ShapeError(f"conv2d supports stride 1 or 2, got {stride}")
    if x.data.ndim != 4 or kernels_.data.ndim != 4 or x.shape[1] != kernels_.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: x {x.shape}, kernels {kernels_.shape}")
    kh, kw = kernels_.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {x.shape[2:]}")
    if bias is not None and bias.shape != (kernels_.shape[0],):
        raise ShapeError(f"conv2d bias must have shape ({kernels_.shape[0]},), got {bias.shape}")
    data = kernels.conv2d_forward(x.data, kernels_.data, stride)
    if bias is not None:
        data = data + bias.data[None, :, None, None]
    parents = (x, kernels_) if bias is None else (x, kernels_, bias)
    out = _make(data, parents, "conv2d")

    def backward():
        gx, gw = kernels.conv2d_backward(x.data, kernels_.data, out.grad, stride)
        _accumulate(x, gx)
        _accumulate(kernels_, gw)
        if bias is not None:
            _accumulate(bias, out.grad.sum(axis=(0, 2, 3)))

    out._backward = backward
    return out


def avgpool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/cols are dropped."""
    if x.data.ndim != 4 or k < 1 or x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"avgpool({k}) cannot pool input of shape {x.shape}")
    out = _make(kernels.avgpool_forward(x.data, k), (x,), "avgpool")

    def backward():
        _accumulate(x, kernels.avgpool_backward(out.grad, k, x.shape))

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b), "add")

    def backward():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    out._backward = backward
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _make(x.data * c, (x,), "scale")

    def backward():
        _accumulate(x, out.grad * c)

    out._backward = backward
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {t.shape}")
    if pred.data.size == 0:
        raise EmptyBatch("mse_loss on an empty batch")
    diff = pred.data - t
    n = diff.size
    out = _make(np.array(np.mean(diff * diff)), (pred,), "mse_loss")

    def backward():
        _accumulate(pred, out.grad * (2.0 / n) * diff)

    out._backward = backward
    return out


def bce_loss(logit: Tensor, labels) -> Tensor:
    """Sigmoid cross-entropy, mean over the batch, in log-sum-exp form."""
    y = np.asarray(labels, dtype=np.float64).reshape(logit.shape)
    if logit.data.size == 0:
        raise EmptyBatch("bce_loss on an empty batch")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("bce_loss labels must be 0 or 1")
    z = logit.data
    n = z.size
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = _make(np.array(per.mean()), (logit,), "bce_loss")

    def backward():
        _accumulate(logit, out.grad * (sigmoid(z) - y) / n)

    out._backward = backward
    return out


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def weighted_sum(x: Tensor, weights) -> Tensor:
    """sum(x * weights) with constant weights; reduces any tensor to a scalar."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum shape mismatch: {x.shape} vs {w.shape}")
    out = _make(np.array(np.sum(x.data * w)), (x,), "weighted_sum")

    def backward():
        _accumulate(x, out.grad * w)

    out._backward = backward
    return out
