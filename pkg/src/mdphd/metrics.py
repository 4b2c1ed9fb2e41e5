"""Evaluation metrics (SNR, segmental SNR) and CSV report generation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "snr_db", "segmental_snr", "EvalReport", "evaluate",
    "SEGSNR_FRAME", "SEGSNR_HOP", "SEGSNR_MIN_DB", "SEGSNR_MAX_DB",
]

SEGSNR_FRAME = 512
SEGSNR_HOP = 256
SEGSNR_MIN_DB = -10.0
SEGSNR_MAX_DB = 35.0
_ERR_FLOOR_REL = 1e-12       # error power floored at this fraction of ref power
_SILENCE_REL = 1e-8          # frame counts as speech above this peak fraction


def snr_db(ref: np.ndarray, est: np.ndarray) -> float:
    """Signal-to-noise ratio of est against ref, in dB.

    The error power is floored at 1e-12 of the reference power so a perfect
    estimate reports a finite ceiling (120 dB) instead of infinity.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate lengths differ")
    p_ref = float(np.sum(ref * ref))
    if p_ref <= 0.0:
        raise ValueError("snr_db is undefined for a silent reference")
    err = ref - est
    p_err = max(float(np.sum(err * err)), _ERR_FLOOR_REL * p_ref)
    return 10.0 * math.log10(p_ref / p_err)


def segmental_snr(ref: np.ndarray, est: np.ndarray,
                  frame: int = SEGSNR_FRAME, hop: int = SEGSNR_HOP) -> float:
    """Mean of per-frame SNRs, each clamped to [-10, 35] dB.

    Frames whose reference energy falls below 1e-8 of the loudest frame are
    treated as silence and excluded.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate lengths differ")
    if len(ref) < frame:
        raise ValueError(f"signal shorter than one frame ({frame} samples)")
    starts = range(0, len(ref) - frame + 1, hop)
    energies = np.array([float(np.sum(ref[i:i + frame] ** 2)) for i in starts])
    peak = float(np.max(energies))
    if peak <= 0.0:
        raise ValueError("segmental_snr found no speech frames")
    vals = []
    for i, e in zip(starts, energies):
        if e <= _SILENCE_REL * peak:
            continue
        err = ref[i:i + frame] - est[i:i + frame]
        p_err = max(float(np.sum(err * err)), _ERR_FLOOR_REL * e)
        vals.append(min(max(10.0 * math.log10(e / p_err), SEGSNR_MIN_DB),
                        SEGSNR_MAX_DB))
    if not vals:
        raise ValueError("segmental_snr found no speech frames")
    return math.fsum(vals) / len(vals)


@dataclass
class EvalReport:
    """Aggregated metric means, keyed by (noise_kind, input_snr_db, metric)."""
    rows: dict = field(default_factory=dict)      # key -> [sum, count]
    per_utterance: list = field(default_factory=list)

    def add(self, noise_kind: str, input_snr_db: float, metric: str,
            value: float, utterance: str | None = None) -> None:
        key = (noise_kind, float(input_snr_db), metric)
        cell = self.rows.setdefault(key, [[], 0])
        cell[0].append(value)
        cell[1] += 1
        if utterance is not None:
            self.per_utterance.append(
                (utterance, noise_kind, float(input_snr_db), metric, value))

    def mean(self, noise_kind: str, input_snr_db: float, metric: str) -> float:
        vals, count = self.rows[(noise_kind, float(input_snr_db), metric)]
        return math.fsum(vals) / count

    def write_csv(self, path, per_utterance: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if per_utterance:
                w.writerow(["utterance", "noise_kind", "input_snr_db",
                            "metric", "value"])
                for row in self.per_utterance:
                    w.writerow([row[0], row[1], f"{row[2]:g}", row[3],
                                f"{row[4]:.6f}"])
            else:
                w.writerow(["noise_kind", "input_snr_db", "metric",
                            "mean", "count"])
                for key in sorted(self.rows):
                    vals, count = self.rows[key]
                    w.writerow([key[0], f"{key[1]:g}", key[2],
                                f"{math.fsum(vals) / count:.6f}", count])


def evaluate(items, enhance_fn) -> EvalReport:
    """Score an enhancement function over an iterable of evaluation items.

    Each item is (name, noise_kind, input_snr_db, x, s); enhance_fn maps a
    noisy waveform to an estimate of the same length.
    """
    report = EvalReport()
    for name, noise_kind, input_snr, x, s in items:
        est = enhance_fn(x)
        if est.shape != s.shape:
            raise ValueError(f"{name}: enhanced length {est.shape} differs "
                             f"from reference {s.shape}")
        report.add(noise_kind, input_snr, "snr_db", snr_db(s, est), name)
        report.add(noise_kind, input_snr, "segmental_snr",
                   segmental_snr(s, est), name)
    return report
