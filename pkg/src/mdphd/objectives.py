"""Loss functions for the denoising networks.

The base loss couples the speech error with the error of the implied noise
estimate n_hat = x - s_hat, so the model is penalized for leaving noise in
as well as for distorting speech. Four interchangeable kinds are provided:

  l1   : |s - s_hat|_1 + |n - n_hat|_1           (baseline)
  l2   : same with l2 norms
  snr  : negative SNR of s_hat against s, in dB
  spec : l2 distance between clean and estimated magnitude spectrograms

Losses sum over the window; batches are averaged over items.
"""
from __future__ import annotations

import warnings

import numpy as np

from .autodiff import Tensor, stft_pair
from .dsp import StftConfig

__all__ = ["LOSS_KINDS", "base_loss", "hybrid_loss"]

LOSS_KINDS = ("l1", "l2", "snr", "spec")

SNR_CLAMP_EPS = 1e-12  # floor on error power, relative to reference power
_L2_EPS = 1e-24        # under the sqrt of l2 norms, keeps the gradient finite
_LN10 = float(np.log(10.0))


def _as_batch(a) -> np.ndarray:
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    return a.reshape(1, -1) if a.ndim == 1 else a


def _l1(t: Tensor) -> Tensor:
    return t.abs().sum(axis=1)


def _l2(t: Tensor) -> Tensor:
    return t.square().sum(axis=1).clamp_min(_L2_EPS).sqrt()


def base_loss(x, s, n, s_hat: Tensor, kind: str = "l1",
              stft_config: StftConfig = StftConfig()) -> Tensor:
    """Energy-conserving loss of a speech estimate; scalar Tensor.

    x, s, n are (batch, window) arrays or tensors; s_hat carries the tape.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    x, s, n = _as_batch(x), _as_batch(s), _as_batch(n)
    if isinstance(s_hat, np.ndarray):
        s_hat = Tensor(s_hat)
    if s_hat.data.ndim == 1:
        s_hat = s_hat.reshape(1, -1)
    if not (x.shape == s.shape == n.shape == s_hat.data.shape):
        raise ValueError("x, s, n, s_hat must have identical (batch, window) shapes")
    mismatch = np.max(np.abs(x - (s + n)))
    if mismatch > 1e-5:
        warnings.warn(f"x deviates from s + n by up to {mismatch:.3g}", stacklevel=2)

    b = x.shape[0]
    if kind in ("l1", "l2"):
        norm = _l1 if kind == "l1" else _l2
        n_hat = Tensor(x) - s_hat
        per_item = norm(Tensor(s) - s_hat) + norm(Tensor(n) - n_hat)
        return per_item.sum() * (1.0 / b)

    if kind == "snr":
        p_ref = (s * s).sum(axis=1)
        if np.any(p_ref <= 0.0):
            # all-silent reference (noise-only example): fall back on error power
            p_ref = np.maximum(p_ref, 1.0)
        err_pow = (Tensor(s) - s_hat).square().sum(axis=1)
        err_pow = err_pow.clamp_min(SNR_CLAMP_EPS * p_ref)
        per_item = err_pow.log() * (10.0 / _LN10) - (10.0 * np.log10(p_ref))
        return per_item.sum() * (1.0 / b)

    # spec: l2 over magnitude spectrograms
    re_h, im_h = stft_pair(s_hat, stft_config)
    mag_h = (re_h.square() + im_h.square()).clamp_min(_L2_EPS).sqrt()
    spec_s = np.abs(np.fft.rfft(
        _frames_np(s, stft_config) * _window_np(stft_config), axis=-1))
    diff = mag_h - Tensor(spec_s)
    per_item = diff.square().sum(axis=(1, 2)).clamp_min(_L2_EPS).sqrt()
    return per_item.sum() * (1.0 / b)


def _window_np(cfg: StftConfig) -> np.ndarray:
    from .dsp import hann_window
    return hann_window(cfg.window_size)


def _frames_np(s: np.ndarray, cfg: StftConfig) -> np.ndarray:
    from .dsp import frame_layout
    num_frames, pad_left, pad_right = frame_layout(s.shape[1], cfg)
    sp = np.pad(s, ((0, 0), (pad_left, pad_right)))
    idx = np.arange(num_frames)[:, None] * cfg.hop_size + np.arange(cfg.window_size)
    return sp[:, idx]


def hybrid_loss(x, s, n, mids: list, finals: list, kind: str = "l1",
                stft_config: StftConfig = StftConfig()) -> Tensor:
    """Sum of base losses over intermediate and final estimates."""
    estimates = list(mids) + list(finals)
    if not estimates:
        raise ValueError("hybrid_loss needs at least one estimate")
    total = base_loss(x, s, n, estimates[0], kind, stft_config)
    for est in estimates[1:]:
        total = total + base_loss(x, s, n, est, kind, stft_config)
    return total
