"""Central finite-difference checking of tape gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward

__all__ = ["finite_difference_grad", "check_gradients"]


def finite_difference_grad(fn, arrays: list[np.ndarray], which: int,
                           h_scale: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar fn(arrays) wrt arrays[which]."""
    base = arrays[which]
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        v = flat[i]
        h = h_scale * (1.0 + abs(v))
        flat[i] = v + h
        fp = fn(arrays)
        flat[i] = v - h
        fm = fn(arrays)
        flat[i] = v
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(build_loss, arrays: list[np.ndarray],
                    h_scale: float = 1e-5) -> float:
    """Compare tape gradients of build_loss against central differences.

    build_loss takes a list of Tensors (requires_grad set) and returns a
    scalar Tensor. Returns the worst relative error over all inputs.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(tensors)
    backward(loss)

    def scalar_fn(arrs):
        consts = [Tensor(a) for a in arrs]
        return float(build_loss(consts).data)

    worst = 0.0
    work = [a.copy() for a in arrays]
    for i, t in enumerate(tensors):
        fd = finite_difference_grad(lambda a: scalar_fn(a), work, i, h_scale)
        got = t.grad if t.grad is not None else np.zeros_like(fd)
        denom = max(np.linalg.norm(fd), np.linalg.norm(got), 1e-12)
        worst = max(worst, float(np.linalg.norm(got - fd)) / denom)
    return worst
