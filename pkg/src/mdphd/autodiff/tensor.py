"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray and records the producing operation, so a
scalar loss can be differentiated by one reverse sweep over the implicit
tape (the graph of parent links). Only the operations needed by the
denoising networks are provided.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "Parameter", "backward", "concat"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 array node on the differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        if data.dtype != np.float32:  # float32 kept for fast training paths
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _result(data, parents, backward_fn) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._result(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._result(a.data - b.data, (a, b), bwd)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._result(-a.data, (a,), bwd)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        if axis is None:
            def bwd(g):
                if a.requires_grad:
                    a._accumulate(np.full_like(a.data, float(g)))

            return Tensor._result(a.data.sum(), (a,), bwd)

        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % a.data.ndim for ax in axes)

        def bwd_axis(g):
            if a.requires_grad:
                gx = g
                if not keepdims:
                    gx = np.expand_dims(gx, axes)
                a._accumulate(np.broadcast_to(gx, a.data.shape).astype(a.data.dtype))

        return Tensor._result(a.data.sum(axis=axes, keepdims=keepdims), (a,), bwd_axis)

    def clamp_min(self, floor) -> "Tensor":
        """Elementwise max(x, floor); gradient is zero where the floor wins."""
        a = self
        floor = np.asarray(floor, dtype=a.data.dtype)
        active = a.data > floor

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * active)

        return Tensor._result(np.maximum(a.data, floor), (a,), bwd)

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size

        def bwd(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.data, float(g) / n))

        return Tensor._result(a.data.mean(), (a,), bwd)

    # -- elementwise nonlinearities ---------------------------------------

    def abs(self) -> "Tensor":
        a = self
        sign = np.sign(a.data)  # subgradient at 0 is 0

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * sign)

        return Tensor._result(np.abs(a.data), (a,), bwd)

    def square(self) -> "Tensor":
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * 2.0 * a.data)

        return Tensor._result(a.data * a.data, (a,), bwd)

    def sqrt(self) -> "Tensor":
        a = self
        root = np.sqrt(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * 0.5 / root)

        return Tensor._result(root, (a,), bwd)

    def log(self) -> "Tensor":
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._result(np.log(a.data), (a,), bwd)

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        a = self
        factor = np.where(a.data > 0.0, 1.0, slope)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * factor)

        return Tensor._result(a.data * factor, (a,), bwd)

    def sigmoid(self) -> "Tensor":
        a = self
        # numerically stable split over sign
        pos = a.data >= 0
        z = np.empty_like(a.data)
        z[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ez = np.exp(a.data[~pos])
        z[~pos] = ez / (1.0 + ez)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * z * (1.0 - z))

        return Tensor._result(z, (a,), bwd)

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        a = self
        old = a.data.shape

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g.reshape(old))

        return Tensor._result(a.data.reshape(*shape), (a,), bwd)

    def slice(self, index) -> "Tensor":
        """Differentiable basic slicing (no fancy indexing)."""
        a = self

        def bwd(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[index] = g
                a._accumulate(buf)

        return Tensor._result(a.data[index], (a,), bwd)

    def pad(self, pad_width) -> "Tensor":
        """Differentiable zero padding; pad_width as for np.pad."""
        a = self
        index = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.data.shape))

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g[index])

        return Tensor._result(np.pad(a.data, pad_width), (a,), bwd)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a stable name for checkpointing."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def concat(tensors, axis: int) -> Tensor:
    """Differentiable concatenation along `axis`."""
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(idx)])

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Gradients accumulate (+=) into existing grad buffers. The tape is
    released afterward so node memory can be reclaimed.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any parameter with requires_grad")

    # topological order via iterative DFS
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
            # free intermediate grad buffers and clear the tape
            if not isinstance(node, Parameter):
                node.grad = None
            node._parents = ()
            node._backward_fn = None
