"""Corpus handling: WAV I/O, synthetic noise, SNR mixing, window slicing
and batch assembly.

Every training example is a SampleTriplet (x, s, n) of aligned windows with
x = s + n. Noise-only examples (s = 0, x = n) are injected up to a target
fraction of each epoch. All generators are pure functions of their seed.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "SAMPLE_RATE", "WINDOW", "HOP",
    "SampleTriplet", "SynthNoiseSpec", "ManifestEntry", "DatasetManifest",
    "read_wav", "write_wav", "snr_gain", "mix_at_snr",
    "gen_highfreq_noise", "gen_babble_surrogate", "gen_noise", "gen_speech_surrogate",
    "slice_windows", "make_batches", "load_entry_signals",
]

SAMPLE_RATE = 16000
WINDOW = 16384
HOP = 8192


@dataclass
class SampleTriplet:
    """Aligned (noisy, clean, noise) windows; x = s + n."""
    x: np.ndarray
    s: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        if not (self.x.shape == self.s.shape == self.n.shape):
            raise ValueError("triplet windows must share one shape")
        if np.max(np.abs(self.x - (self.s + self.n))) > 1e-6:
            raise ValueError("triplet violates x = s + n")


@dataclass(frozen=True)
class SynthNoiseSpec:
    kind: str = "highfreq_sine"  # highfreq_sine | babble_surrogate | mixture
    band: tuple = (1000.0, 5000.0)
    component_count: int = 6
    sine_count: int = 4

    def __post_init__(self):
        if self.kind not in ("highfreq_sine", "babble_surrogate", "mixture"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        lo, hi = self.band
        if not (0.0 < lo < hi < SAMPLE_RATE / 2):
            raise ValueError(f"band must lie inside (0, {SAMPLE_RATE // 2}), got {self.band}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "band": list(self.band),
                "component_count": self.component_count,
                "sine_count": self.sine_count}

    @staticmethod
    def from_json(d: dict) -> "SynthNoiseSpec":
        return SynthNoiseSpec(kind=d["kind"], band=tuple(d.get("band", (1000.0, 5000.0))),
                              component_count=d.get("component_count", 6),
                              sine_count=d.get("sine_count", 4))


# ---------------------------------------------------------------------------
# WAV I/O: mono 16 kHz, PCM16 or float32, no silent conversion
# ---------------------------------------------------------------------------

def read_wav(path) -> np.ndarray:
    """Read a mono 16 kHz WAV (PCM16 or float32) as float64 in [-1, 1)."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate} Hz")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise ValueError(f"{path}: unsupported sample format {data.dtype}; "
                     "expected 16-bit PCM or 32-bit float")


def write_wav(path, w: np.ndarray, fmt: str = "float32") -> None:
    """Write a mono 16 kHz WAV; fmt is "float32" or "pcm16"."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("write_wav expects a 1-D waveform")
    if fmt == "float32":
        wavfile.write(path, SAMPLE_RATE, w.astype(np.float32))
    elif fmt == "pcm16":
        q = np.clip(np.round(w * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, SAMPLE_RATE, q)
    else:
        raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# mixing and synthesis
# ---------------------------------------------------------------------------

def snr_gain(s: np.ndarray, n: np.ndarray, snr_db: float) -> float:
    """Gain on n so that s + gain*n has the requested SNR."""
    ps = float(np.sum(s * s))
    pn = float(np.sum(n * n))
    if ps <= 0.0 or pn <= 0.0:
        raise ValueError("mix_at_snr requires nonzero-energy speech and noise")
    return float(np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(s: np.ndarray, n: np.ndarray, snr_db: float):
    """Return (x, scaled_n) with SNR(s, scaled_n) == snr_db."""
    if s.shape != n.shape:
        raise ValueError("speech and noise lengths differ")
    g = snr_gain(s, n, snr_db)
    scaled = g * n
    return s + scaled, scaled


def _unit_rms(w: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(w * w))
    if rms <= 0.0:
        raise ValueError("cannot normalize a silent signal")
    return w / rms


def gen_highfreq_noise(spec: SynthNoiseSpec, length: int, seed: int) -> np.ndarray:
    """Sum of random sinusoids inside the configured high-frequency band."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.band
    t = np.arange(length) / SAMPLE_RATE
    out = np.zeros(length)
    for _ in range(spec.sine_count):
        f = rng.uniform(lo, hi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += np.sin(2.0 * np.pi * f * t + phase)
    return _unit_rms(out)


def gen_babble_surrogate(spec: SynthNoiseSpec, length: int, seed: int) -> np.ndarray:
    """Speech-band surrogate for babble: several modulated pink-ish streams.

    Each stream is noise with a 1/sqrt(f) spectral tilt band-limited to
    100-4000 Hz, amplitude-modulated at a random 2-8 Hz syllabic rate.
    """
    if spec.component_count < 2:
        raise ValueError("babble surrogate needs at least 2 components")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / SAMPLE_RATE
    freqs = np.fft.rfftfreq(length, 1.0 / SAMPLE_RATE)
    band = (freqs >= 100.0) & (freqs <= 4000.0)
    tilt = np.zeros_like(freqs)
    tilt[band] = 1.0 / np.sqrt(np.maximum(freqs[band], 100.0))
    out = np.zeros(length)
    for _ in range(spec.component_count):
        white = rng.standard_normal(length)
        shaped = np.fft.irfft(np.fft.rfft(white) * tilt, n=length)
        rate = rng.uniform(2.0, 8.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        am = 0.5 * (1.0 + np.sin(2.0 * np.pi * rate * t + phase))
        out += shaped * am
    return _unit_rms(out)


def gen_noise(spec: SynthNoiseSpec, length: int, seed: int) -> np.ndarray:
    """Dispatch on noise kind; "mixture" sums both at equal RMS."""
    if spec.kind == "highfreq_sine":
        return gen_highfreq_noise(spec, length, seed)
    if spec.kind == "babble_surrogate":
        return gen_babble_surrogate(spec, length, seed)
    hf = gen_highfreq_noise(spec, length, seed)
    bb = gen_babble_surrogate(spec, length, seed + 1)
    return _unit_rms(hf + bb)


def gen_speech_surrogate(length: int, seed: int) -> np.ndarray:
    """Synthetic voiced signal for corpus-free experiments: a pitch-modulated
    harmonic series with formant-like spectral shaping and syllabic gating."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 220.0)
    vibrato = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t
                                  + rng.uniform(0, 2 * np.pi))
    phase = 2.0 * np.pi * np.cumsum(f0 * vibrato) / SAMPLE_RATE
    out = np.zeros(length)
    formants = (500.0, 1500.0, 2500.0)
    for h in range(1, 24):
        fh = f0 * h
        if fh > 3800.0:
            break
        gain = sum(np.exp(-0.5 * ((fh - fc) / 300.0) ** 2) for fc in formants)
        out += (gain + 0.05) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllabic on/off gating
    gate_rate = rng.uniform(2.0, 4.0)
    gate = 0.5 * (1.0 + np.tanh(4.0 * np.sin(2.0 * np.pi * gate_rate * t
                                             + rng.uniform(0, 2 * np.pi))))
    return _unit_rms(out * (0.15 + 0.85 * gate))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def slice_windows(w: np.ndarray, window: int = WINDOW, hop: int = HOP):
    """Slice into overlapping windows; returns list of (window, padded_flag).

    The final partial window is zero-padded to full length and flagged.
    """
    if window < 1 or hop < 1:
        raise ValueError("window and hop must be positive")
    if len(w) == 0:
        raise ValueError("cannot slice an empty waveform")
    count = max(1, -(-(len(w) - window) // hop) + 1)
    out = []
    for i in range(count):
        lo = i * hop
        chunk = w[lo:lo + window]
        padded = len(chunk) < window
        if padded:
            chunk = np.pad(chunk, (0, window - len(chunk)))
        out.append((chunk, padded))
    return out


# ---------------------------------------------------------------------------
# manifest and batching
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    clean: str | None                 # path, or None for noise-only
    noise: str | SynthNoiseSpec       # path or synthesis spec
    snr_db: float
    split: str = "train"
    kind: str | None = None           # condition label for reports

    def noise_kind(self) -> str:
        if self.kind is not None:
            return self.kind
        if isinstance(self.noise, SynthNoiseSpec):
            return self.noise.kind
        return Path(self.noise).stem

    def to_json(self) -> dict:
        noise = {"synth": self.noise.to_json()} \
            if isinstance(self.noise, SynthNoiseSpec) else self.noise
        out = {"clean": self.clean, "noise": noise,
               "snr_db": self.snr_db, "split": self.split}
        if self.kind is not None:
            out["kind"] = self.kind
        return out

    @staticmethod
    def from_json(d: dict) -> "ManifestEntry":
        noise = d["noise"]
        if isinstance(noise, dict):
            noise = SynthNoiseSpec.from_json(noise["synth"])
        return ManifestEntry(d.get("clean"), noise, float(d["snr_db"]),
                             d.get("split", "train"), d.get("kind"))


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    noise_only_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.noise_only_fraction <= 1.0:
            raise ValueError("noise_only_fraction must lie in [0, 1]")

    def split(self, tag: str) -> list:
        return [e for e in self.entries if e.split == tag]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json()) + "\n")

    @staticmethod
    def load(path, noise_only_fraction: float = 0.25) -> "DatasetManifest":
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(ManifestEntry.from_json(json.loads(line)))
        return DatasetManifest(entries, noise_only_fraction)


def load_entry_signals(entry: ManifestEntry, seed: int,
                       min_length: int = WINDOW):
    """Materialize (x, s, n) full-length signals for one manifest entry."""
    if entry.clean is not None:
        s = read_wav(entry.clean)
        if len(s) < min_length:
            s = np.pad(s, (0, min_length - len(s)))
    else:
        s = None

    length = len(s) if s is not None else min_length
    if isinstance(entry.noise, SynthNoiseSpec):
        n = gen_noise(entry.noise, length, seed)
    else:
        n = read_wav(entry.noise)
        if len(n) < length:
            n = np.tile(n, -(-length // len(n)))
        n = n[:length]

    if s is None:  # noise-only: x = n, s = 0
        return n.copy(), np.zeros(length), n
    x, scaled_n = mix_at_snr(s, n, entry.snr_db)
    return x, s, scaled_n


def _entry_windows(entry: ManifestEntry, seed: int, window: int, hop: int,
                   include_padded: bool = True):
    x, s, n = load_entry_signals(entry, seed, min_length=window)
    xs, ss, ns = (slice_windows(a, window, hop) for a in (x, s, n))
    out = []
    for (xw, padded), (sw, _), (nw, _) in zip(xs, ss, ns):
        if padded and not include_padded:
            continue
        out.append((SampleTriplet(xw, sw, nw), padded))
    return out


def make_batches(manifest: DatasetManifest, batch_size: int = 16, seed: int = 0,
                 window: int = WINDOW, hop: int = HOP, split: str = "train",
                 max_skip_fraction: float = 0.1):
    """Infinite stream of SampleTriplet batches; epoch shuffles are pure
    functions of (seed, epoch), so the stream is resumable by re-iterating.

    Noise-only windows (s = 0) are injected on top of the manifest windows
    until they make up `noise_only_fraction` of the epoch.
    """
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no entries for split {split!r}")

    epoch = 0
    while True:
        rng = np.random.default_rng((seed, epoch))
        triplets = []
        skipped = 0
        for k, entry in enumerate(entries):
            try:
                wins = _entry_windows(entry, seed=int(rng.integers(2 ** 31)),
                                      window=window, hop=hop)
            except (OSError, ValueError) as exc:
                warnings.warn(f"skipping unreadable entry {k}: {exc}", stacklevel=2)
                skipped += 1
                continue
            triplets.extend(t for t, _ in wins)
        if skipped > max_skip_fraction * len(entries):
            raise RuntimeError(f"{skipped}/{len(entries)} manifest entries unreadable")

        frac = manifest.noise_only_fraction
        n_speech = sum(1 for t in triplets if np.any(t.s != 0.0))
        n_noise_only = len(triplets) - n_speech
        target_extra = int(round(frac / (1.0 - frac) * n_speech)) - n_noise_only \
            if frac < 1.0 else 0
        noise_sources = [e.noise for e in entries]
        for _ in range(max(0, target_extra)):
            src = noise_sources[int(rng.integers(len(noise_sources)))]
            if isinstance(src, SynthNoiseSpec):
                nw = gen_noise(src, window, int(rng.integers(2 ** 31)))
            else:
                full = read_wav(src)
                if len(full) < window:
                    full = np.tile(full, -(-window // len(full)))
                lo = int(rng.integers(max(1, len(full) - window + 1)))
                nw = full[lo:lo + window]
            triplets.append(SampleTriplet(nw.copy(), np.zeros(window), nw))

        order = rng.permutation(len(triplets))
        for b0 in range(0, len(order) - batch_size + 1, batch_size):
            batch = [triplets[i] for i in order[b0:b0 + batch_size]]
            yield (np.stack([t.x for t in batch]),
                   np.stack([t.s for t in batch]),
                   np.stack([t.n for t in batch]))
        epoch += 1
