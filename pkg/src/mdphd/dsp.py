"""Deterministic signal-processing primitives: framing, STFT/iSTFT,
magnitude extraction and T-F masking.

Conventions, fixed for reproducibility:
  - periodic Hann window (constant overlap-add at 50% hop);
  - center zero-padding of window_size//2 on each side before framing,
    plus right padding so the final frame lands on a full hop;
  - one-sided spectra of window_size//2 + 1 bins;
  - iSTFT re-windows each inverse frame and divides by the summed
    squared-window envelope, then restores the exact original length.

All functions are pure; arrays are float64 / complex128.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StftConfig",
    "Spectrogram",
    "hann_window",
    "stft",
    "istft",
    "log_magnitude",
    "apply_mask",
    "frame_layout",
]

ENVELOPE_EPS = 1e-12
DEFAULT_LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 512
    hop_size: int = 256
    window_fn: str = "hann"

    def __post_init__(self):
        if self.window_size < 2 or self.window_size % 2 != 0:
            raise ValueError(f"window_size must be even and >= 2, got {self.window_size}")
        if self.hop_size < 1 or self.window_size % self.hop_size != 0:
            raise ValueError(
                f"hop_size must divide window_size, got {self.hop_size}/{self.window_size}")
        if self.window_fn != "hann":
            raise ValueError(f"unsupported window_fn {self.window_fn!r}")

    @property
    def num_bins(self) -> int:
        return self.window_size // 2 + 1


@dataclass
class Spectrogram:
    """One-sided complex T-F grid of shape (num_frames, num_bins)."""

    bins: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2 or self.bins.shape[1] != self.config.num_bins:
            raise ValueError(f"expected (frames, {self.config.num_bins}) bins, "
                             f"got {self.bins.shape}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


def hann_window(size: int) -> np.ndarray:
    """Periodic Hann window w[k] = 0.5*(1 - cos(2*pi*k/size))."""
    if size < 2:
        raise ValueError(f"window size must be >= 2, got {size}")
    k = np.arange(size)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / size))


def frame_layout(length: int, cfg: StftConfig) -> tuple[int, int, int]:
    """Return (num_frames, pad_left, pad_right) for a signal of `length`."""
    if length < 1:
        raise ValueError("cannot frame an empty signal")
    hop = cfg.hop_size
    num_frames = -(-length // hop) + 1
    pad_left = cfg.window_size // 2
    padded = (num_frames - 1) * hop + cfg.window_size
    pad_right = padded - length - pad_left
    return num_frames, pad_left, pad_right


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    num_frames, pad_left, pad_right = frame_layout(len(x), cfg)
    xp = np.pad(x, (pad_left, pad_right))
    idx = np.arange(num_frames)[:, None] * cfg.hop_size + np.arange(cfg.window_size)
    return xp[idx]


def stft(x: np.ndarray, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Short-time Fourier transform of a mono waveform."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("stft expects a non-empty 1-D waveform")
    frames = _frames(x, cfg) * hann_window(cfg.window_size)
    return Spectrogram(np.fft.rfft(frames, axis=1), cfg, len(x))


def istft(spec: Spectrogram) -> np.ndarray:
    """Inverse STFT via windowed overlap-add with envelope normalization."""
    cfg = spec.config
    window = hann_window(cfg.window_size)
    frames = np.fft.irfft(spec.bins, n=cfg.window_size, axis=1) * window
    num_frames = spec.bins.shape[0]
    padded = (num_frames - 1) * cfg.hop_size + cfg.window_size
    acc = np.zeros(padded)
    env = np.zeros(padded)
    wsq = window * window
    for f in range(num_frames):
        lo = f * cfg.hop_size
        acc[lo:lo + cfg.window_size] += frames[f]
        env[lo:lo + cfg.window_size] += wsq
    pad_left = cfg.window_size // 2
    keep_env = env[pad_left:pad_left + spec.original_length]
    if np.any(keep_env < ENVELOPE_EPS):
        raise ArithmeticError("degenerate overlap-add envelope on retained samples")
    return acc[pad_left:pad_left + spec.original_length] / keep_env


def log_magnitude(spec: Spectrogram, floor: float = DEFAULT_LOG_FLOOR) -> np.ndarray:
    """Elementwise ln(max(|bin|, floor))."""
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    return np.log(np.maximum(np.abs(spec.bins), floor))


def apply_mask(spec: Spectrogram, mask: np.ndarray) -> Spectrogram:
    """Scale complex bins by a real mask in [0, 1]; phase is untouched."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != spec.bins.shape:
        raise ValueError(f"mask shape {mask.shape} != spectrogram shape {spec.bins.shape}")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("mask entries must lie in [0, 1]")
    return Spectrogram(spec.bins * mask, spec.config, spec.original_length)
