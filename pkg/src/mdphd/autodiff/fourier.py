"""Differentiable STFT / iSTFT for batched windows.

Gradients must flow through the T-F network's analysis/synthesis when it
sits behind the time-domain network in the cascade, so the transforms are
tape ops. Framing and normalization match mdphd.dsp exactly; spectra are
carried as (real, imag) tensor pairs.
"""
from __future__ import annotations

import numpy as np

from ..dsp import StftConfig, frame_layout, hann_window
from .tensor import Tensor

__all__ = ["stft_pair", "istft_from_pair", "log_mag"]


def _one_sided_adjoint(gre: np.ndarray, gim: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of the one-sided DFT: grad wrt the real input frames."""
    cdt = np.complex64 if gre.dtype == np.float32 else np.complex128
    full = np.zeros(gre.shape[:-1] + (n,), dtype=cdt)
    full[..., :gre.shape[-1]] = gre + 1j * gim
    return n * np.real(np.fft.ifft(full, axis=-1))


def stft_pair(x: Tensor, cfg: StftConfig) -> tuple[Tensor, Tensor]:
    """Batched STFT: (B, T) -> real/imag tensors of shape (B, frames, bins)."""
    b, t = x.data.shape
    num_frames, pad_left, pad_right = frame_layout(t, cfg)
    window = hann_window(cfg.window_size).astype(x.data.dtype)
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right)))
    idx = np.arange(num_frames)[:, None] * cfg.hop_size + np.arange(cfg.window_size)
    frames = xp[:, idx] * window
    spec = np.fft.rfft(frames, axis=-1)
    rdt = x.data.dtype

    def scatter_frames(gframes: np.ndarray) -> np.ndarray:
        gxp = np.zeros_like(xp)
        gf = gframes * window
        for f in range(num_frames):
            lo = f * cfg.hop_size
            gxp[:, lo:lo + cfg.window_size] += gf[:, f]
        return gxp[:, pad_left:pad_left + t]

    def bwd_re(g):
        if x.requires_grad:
            x._accumulate(scatter_frames(_one_sided_adjoint(g, np.zeros_like(g),
                                                            cfg.window_size)))

    def bwd_im(g):
        if x.requires_grad:
            x._accumulate(scatter_frames(_one_sided_adjoint(np.zeros_like(g), g,
                                                            cfg.window_size)))

    re = Tensor._result(spec.real.astype(rdt), (x,), bwd_re)
    im = Tensor._result(spec.imag.astype(rdt), (x,), bwd_im)
    return re, im


def istft_from_pair(re: Tensor, im: Tensor, cfg: StftConfig, length: int) -> Tensor:
    """Batched inverse STFT: (B, frames, bins) pair -> (B, length) waveform."""
    num_frames, pad_left, _ = frame_layout(length, cfg)
    if re.data.shape != im.data.shape or re.data.shape[1] != num_frames:
        raise ValueError("spectrogram pair inconsistent with target length")
    rdt = re.data.dtype
    window = hann_window(cfg.window_size).astype(rdt)
    padded = (num_frames - 1) * cfg.hop_size + cfg.window_size
    env = np.zeros(padded)
    wsq = window * window
    for f in range(num_frames):
        env[f * cfg.hop_size:f * cfg.hop_size + cfg.window_size] += wsq
    keep = slice(pad_left, pad_left + length)
    keep_env = env[keep].astype(rdt)

    frames = np.fft.irfft(re.data + 1j * im.data, n=cfg.window_size, axis=-1) * window
    acc = np.zeros((re.data.shape[0], padded), dtype=rdt)
    for f in range(num_frames):
        lo = f * cfg.hop_size
        acc[:, lo:lo + cfg.window_size] += frames[:, f]
    out = acc[:, keep] / keep_env

    n = cfg.window_size
    nbins = cfg.num_bins
    scale = (np.ones(nbins) * (2.0 / n)).astype(rdt)
    scale[0] = 1.0 / n
    scale[-1] = 1.0 / n

    def bwd(g):
        gacc = np.zeros((g.shape[0], padded), dtype=rdt)
        gacc[:, keep] = g / keep_env
        gframes = np.empty((g.shape[0], num_frames, cfg.window_size), dtype=rdt)
        for f in range(num_frames):
            lo = f * cfg.hop_size
            gframes[:, f] = gacc[:, lo:lo + cfg.window_size]
        gframes *= window
        gspec = np.fft.rfft(gframes, axis=-1)
        if re.requires_grad:
            re._accumulate(scale * gspec.real)
        if im.requires_grad:
            im._accumulate(scale * gspec.imag)

    return Tensor._result(out, (re, im), bwd)


def log_mag(re: Tensor, im: Tensor, floor: float) -> Tensor:
    """ln(max(sqrt(re^2 + im^2), floor)), with zero gradient below the floor."""
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    mag = np.sqrt(re.data * re.data + im.data * im.data)
    active = mag > floor
    out = np.log(np.maximum(mag, floor))
    inv_sq = np.where(active, 1.0 / np.maximum(mag * mag, floor * floor), 0.0)

    def bwd(g):
        gm = g * inv_sq
        if re.requires_grad:
            re._accumulate(gm * re.data)
        if im.requires_grad:
            im._accumulate(gm * im.data)

    return Tensor._result(out, (re, im), bwd)
