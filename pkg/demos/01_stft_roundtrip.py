"""STFT / iSTFT round trip.

Builds a short chirp, takes the 512/256 Hann STFT, reconstructs by
envelope-normalized overlap-add, and prints the reconstruction error.
"""
import numpy as np

from mdphd.dsp import StftConfig, istft, log_magnitude, stft

sr = 16000
t = np.arange(2 * sr) / sr
x = 0.5 * np.sin(2 * np.pi * (200 + 400 * t) * t)  # 200 -> 1000 Hz chirp

cfg = StftConfig(window_size=512, hop_size=256)
spec = stft(x, cfg)
print(f"waveform {x.shape} -> spectrogram {spec.bins.shape} "
      f"({cfg.num_bins} bins)")

lm = log_magnitude(spec)
print(f"log-magnitude range: [{lm.min():.2f}, {lm.max():.2f}]")

y = istft(spec)
rel = np.linalg.norm(y - x) / np.linalg.norm(x)
print(f"round-trip relative L2 error: {rel:.3e}")
assert rel < 1e-10
