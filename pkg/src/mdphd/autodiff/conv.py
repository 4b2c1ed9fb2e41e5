"""Differentiable 1-D/2-D convolutions and their transposed (adjoint) forms.

Each forward/adjoint primitive loops over kernel taps and issues one GEMM
(np.tensordot) per tap, which keeps desk-scale CPU training practical. The
input-gradient scatter and kernel-gradient contraction are shared between
the convolution backward pass and the transposed-convolution forward pass,
so the adjoint identity <conv(x), y> == <x, tconv(y)> holds by construction.

Padding conventions:
  - 1-D "same" (non-causal): symmetric zero padding of (k-1)//2 * dilation,
    requires odd k; with stride s output length is ceil(T / s).
  - 2-D "same": total pad = max((ceil(n/s)-1)*s + k - n, 0), split with the
    extra sample on the right/bottom. "valid": no padding.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["conv1d", "transposed_conv1d", "conv2d", "transposed_conv2d"]


# ---------------------------------------------------------------------------
# 1-D primitives. x: (B, Cin, T), w: (Cout, Cin, K).
# ---------------------------------------------------------------------------

def _pad1d(k: int, dilation: int) -> int:
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd for same_noncausal padding, got {k}")
    return (k - 1) // 2 * dilation


def _conv1d_fwd(x: np.ndarray, w: np.ndarray, stride: int, dilation: int) -> np.ndarray:
    b, _, t = x.shape
    k = w.shape[2]
    p = _pad1d(k, dilation)
    t_out = -(-t // stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    out = np.zeros((b, w.shape[0], t_out), dtype=x.dtype)
    hi = (t_out - 1) * stride + 1
    for j in range(k):
        xs = xp[:, :, j * dilation:j * dilation + hi:stride]
        out += np.tensordot(w[:, :, j], xs, axes=(1, 1)).transpose(1, 0, 2)
    return out


def _conv1d_grad_x(g: np.ndarray, w: np.ndarray, stride: int, dilation: int,
                   t_in: int) -> np.ndarray:
    """Adjoint of _conv1d_fwd in its first argument; g: (B, Cout, T_out)."""
    b, _, t_out = g.shape
    k = w.shape[2]
    p = _pad1d(k, dilation)
    gxp = np.zeros((b, w.shape[1], t_in + 2 * p), dtype=g.dtype)
    hi = (t_out - 1) * stride + 1
    for j in range(k):
        tmp = np.tensordot(w[:, :, j], g, axes=(0, 1)).transpose(1, 0, 2)
        gxp[:, :, j * dilation:j * dilation + hi:stride] += tmp
    return gxp[:, :, p:p + t_in]


def _conv1d_grad_w(g: np.ndarray, x: np.ndarray, stride: int, dilation: int,
                   k: int) -> np.ndarray:
    p = _pad1d(k, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    t_out = g.shape[2]
    hi = (t_out - 1) * stride + 1
    gw = np.empty((g.shape[1], x.shape[1], k), dtype=g.dtype)
    for j in range(k):
        xs = xp[:, :, j * dilation:j * dilation + hi:stride]
        gw[:, :, j] = np.tensordot(g, xs, axes=([0, 2], [0, 2]))
    return gw


def conv1d(x: Tensor, w: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Non-causal same-padded 1-D convolution; output time = ceil(T/stride)."""
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    t_in = x.data.shape[2]
    out = _conv1d_fwd(x.data, w.data, stride, dilation)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(_conv1d_grad_x(g, w.data, stride, dilation, t_in))
        if w.requires_grad:
            w._accumulate(_conv1d_grad_w(g, x.data, stride, dilation, w.data.shape[2]))

    return Tensor._result(out, (x, w), bwd)


def transposed_conv1d(x: Tensor, w: Tensor, stride: int, t_out: int,
                      dilation: int = 1) -> Tensor:
    """Adjoint of conv1d with the same kernel/stride; maps (B, Cout, T/s) -> (B, Cin, t_out)."""
    expected = -(-t_out // stride)
    if x.data.shape[2] != expected:
        raise ValueError(f"transposed_conv1d: input time {x.data.shape[2]} "
                         f"inconsistent with t_out={t_out}, stride={stride}")
    out = _conv1d_grad_x(x.data, w.data, stride, dilation, t_out)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(_conv1d_fwd(g, w.data, stride, dilation))
        if w.requires_grad:
            w._accumulate(_conv1d_grad_w(x.data, g, stride, dilation, w.data.shape[2]))

    return Tensor._result(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# 2-D primitives. x: (B, Cin, H, W), w: (Cout, Cin, KH, KW).
# ---------------------------------------------------------------------------

def _pad2d_amounts(n: int, k: int, s: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    total = max((-(-n // s) - 1) * s + k - n, 0)
    lo = total // 2
    return lo, total - lo


def _out2d(n: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-n // s)
    return (n - k) // s + 1


def _conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: tuple, padding: str) -> np.ndarray:
    b = x.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = stride
    ph = _pad2d_amounts(x.shape[2], kh, sh, padding)
    pw = _pad2d_amounts(x.shape[3], kw, sw, padding)
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input "
                         f"{xp.shape[2]}x{xp.shape[3]}")
    ho = _out2d(x.shape[2], kh, sh, padding)
    wo = _out2d(x.shape[3], kw, sw, padding)
    out = np.zeros((b, w.shape[0], ho, wo), dtype=x.dtype)
    hih, hiw = (ho - 1) * sh + 1, (wo - 1) * sw + 1
    for p in range(kh):
        for q in range(kw):
            xs = xp[:, :, p:p + hih:sh, q:q + hiw:sw]
            out += np.tensordot(w[:, :, p, q], xs, axes=(1, 1)).transpose(1, 0, 2, 3)
    return out


def _conv2d_grad_x(g: np.ndarray, w: np.ndarray, stride: tuple, padding: str,
                   in_shape: tuple) -> np.ndarray:
    b = g.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = stride
    h, wd = in_shape
    ph = _pad2d_amounts(h, kh, sh, padding)
    pw = _pad2d_amounts(wd, kw, sw, padding)
    ho, wo = g.shape[2], g.shape[3]
    gxp = np.zeros((b, w.shape[1], h + ph[0] + ph[1], wd + pw[0] + pw[1]), dtype=g.dtype)
    hih, hiw = (ho - 1) * sh + 1, (wo - 1) * sw + 1
    for p in range(kh):
        for q in range(kw):
            tmp = np.tensordot(w[:, :, p, q], g, axes=(0, 1)).transpose(1, 0, 2, 3)
            gxp[:, :, p:p + hih:sh, q:q + hiw:sw] += tmp
    return gxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + wd]


def _conv2d_grad_w(g: np.ndarray, x: np.ndarray, stride: tuple, padding: str,
                   kshape: tuple) -> np.ndarray:
    kh, kw = kshape[2], kshape[3]
    sh, sw = stride
    ph = _pad2d_amounts(x.shape[2], kh, sh, padding)
    pw = _pad2d_amounts(x.shape[3], kw, sw, padding)
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    ho, wo = g.shape[2], g.shape[3]
    hih, hiw = (ho - 1) * sh + 1, (wo - 1) * sw + 1
    gw = np.empty(kshape, dtype=g.dtype)
    for p in range(kh):
        for q in range(kw):
            xs = xp[:, :, p:p + hih:sh, q:q + hiw:sw]
            gw[:, :, p, q] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def conv2d(x: Tensor, w: Tensor, stride: tuple = (1, 1), padding: str = "same") -> Tensor:
    """Strided 2-D cross-correlation; "same" output = ceil(dim/stride)."""
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride[0] < 1 or stride[1] < 1:
        raise ValueError("strides must be >= 1")
    in_shape = x.data.shape[2:]
    out = _conv2d_fwd(x.data, w.data, stride, padding)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(_conv2d_grad_x(g, w.data, stride, padding, in_shape))
        if w.requires_grad:
            w._accumulate(_conv2d_grad_w(g, x.data, stride, padding, w.data.shape))

    return Tensor._result(out, (x, w), bwd)


def transposed_conv2d(x: Tensor, w: Tensor, stride: tuple, out_shape: tuple,
                      padding: str = "same") -> Tensor:
    """Adjoint of conv2d; maps the conv output grid back to spatial out_shape."""
    kh, kw = w.data.shape[2], w.data.shape[3]
    eh = _out2d(out_shape[0], kh, stride[0], padding)
    ew = _out2d(out_shape[1], kw, stride[1], padding)
    if x.data.shape[2:] != (eh, ew):
        raise ValueError(f"transposed_conv2d: input grid {x.data.shape[2:]} "
                         f"inconsistent with out_shape={out_shape}, stride={stride}")
    out = _conv2d_grad_x(x.data, w.data, stride, padding, out_shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(_conv2d_fwd(g, w.data, stride, padding))
        if w.requires_grad:
            w._accumulate(_conv2d_grad_w(x.data, g, stride, padding, w.data.shape))

    return Tensor._result(out, (x, w), bwd)
