"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, topological_order

DEFAULT_STEP = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_gradients(
    fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray], h: float = DEFAULT_STEP
) -> list[np.ndarray]:
    """Central differences of the scalar ``fn`` with respect to every array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for i, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(fn([Tensor(a) for a in arrays]).data)
            flat[j] = orig - h
            down = float(fn([Tensor(a) for a in arrays]).data)
            flat[j] = orig
            gflat[j] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(leaves)
    out.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def min_relu_margin(fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> float:
    """Smallest |input| over every relu in the graph. Finite differences with
    step h are only meaningful when this exceeds h."""
    out = fn([Tensor(a) for a in arrays])
    margin = np.inf
    for node in topological_order(out):
        if node.op == "relu":
            margin = min(margin, float(np.abs(node._parents[0].data).min()))
    return margin


def check_gradients(
    fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray], h: float = DEFAULT_STEP
) -> float:
    """Worst relative error between analytic and numeric gradients."""
    analytic = analytic_gradients(fn, arrays)
    numeric = numeric_gradients(fn, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
