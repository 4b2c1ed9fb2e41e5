"""SNR / segmental SNR metric tests against hand-derived values."""
import numpy as np
import pytest

from mdphd.metrics import (EvalReport, SEGSNR_MAX_DB, SEGSNR_MIN_DB, evaluate,
                           segmental_snr, snr_db)


def speech_like(length, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length) / 16000.0
    return np.sin(2 * np.pi * 150 * t) * (0.5 + 0.5 * rng.uniform())


def test_snr_perfect_estimate_capped():
    s = speech_like(4096)
    assert snr_db(s, s) == pytest.approx(120.0, abs=1e-9)


def test_snr_zero_estimate_is_zero_db():
    s = speech_like(4096, seed=1)
    assert snr_db(s, np.zeros_like(s)) == pytest.approx(0.0, abs=1e-12)


def test_snr_ten_db_construction():
    # estimate = s + e with ||e||^2 = 0.1 ||s||^2 -> exactly 10 dB
    s = speech_like(4096, seed=2)
    e = np.ones_like(s)
    e *= np.sqrt(0.1 * np.sum(s * s) / np.sum(e * e))
    assert snr_db(s, s + e) == pytest.approx(10.0, abs=1e-9)


def test_snr_scale_invariant():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(2048)
    est = s + rng.standard_normal(2048) * 0.2
    assert snr_db(3.7 * s, 3.7 * est) == pytest.approx(snr_db(s, est),
                                                       abs=1e-9)


def test_snr_zero_reference_rejected():
    with pytest.raises(ValueError):
        snr_db(np.zeros(100), np.ones(100))


def test_snr_length_mismatch_rejected():
    with pytest.raises(ValueError):
        snr_db(np.ones(10), np.ones(11))


def test_segsnr_perfect_estimate_clamps_high():
    s = speech_like(4096, seed=4)
    assert segmental_snr(s, s) == pytest.approx(SEGSNR_MAX_DB)


def test_segsnr_negated_estimate():
    # est = -s: per-frame error power is 4x the signal power, so each
    # frame sits at 10 log10(1/4) = -6.02 dB, above the clamp floor
    s = speech_like(4096, seed=5)
    assert segmental_snr(s, -s) == pytest.approx(10 * np.log10(0.25),
                                                 abs=1e-9)


def test_segsnr_bounds():
    rng = np.random.default_rng(6)
    s = rng.standard_normal(8192)
    est = rng.standard_normal(8192) * 100.0
    v = segmental_snr(s, est)
    assert SEGSNR_MIN_DB <= v <= SEGSNR_MAX_DB


def test_segsnr_excludes_silent_frames():
    # speech only in the first half; silent tail frames must not dilute
    s = np.zeros(8192)
    s[:4096] = speech_like(4096, seed=7)
    est = s.copy()
    est[:4096] += np.ones(4096) * 1e-3
    with_tail = segmental_snr(s, est)
    compact = segmental_snr(s[:4096], est[:4096])
    assert with_tail == pytest.approx(compact, abs=1e-6)


def test_segsnr_all_silence_rejected():
    with pytest.raises(ValueError, match="no speech frames"):
        segmental_snr(np.zeros(4096), np.ones(4096))


def test_segsnr_short_signal_rejected():
    with pytest.raises(ValueError):
        segmental_snr(np.ones(100), np.ones(100))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def make_items(n=4):
    items = []
    for i in range(n):
        s = speech_like(4096, seed=10 + i)
        noise = np.random.default_rng(50 + i).standard_normal(4096)
        noise *= np.sqrt(np.sum(s * s) / (np.sum(noise * noise) * 10 ** 0.5))
        items.append((f"u{i}", "white", 5.0, s + noise, s))
    return items


def test_evaluate_identity_model_reports_input_snr():
    items = make_items()
    report = evaluate(items, lambda x: x)
    mean = report.mean("white", 5.0, "snr_db")
    assert mean == pytest.approx(5.0, abs=1e-9)


def test_evaluate_oracle_model_capped():
    items = make_items()
    # oracle: return the clean reference for each item (keyed by content)
    lookup = {id(x): s for _, _, _, x, s in items}
    report = evaluate(items, lambda x: lookup[id(x)])
    assert report.mean("white", 5.0, "snr_db") == pytest.approx(120.0)
    assert report.mean("white", 5.0, "segmental_snr") == pytest.approx(35.0)


def test_evaluate_groups_by_condition():
    items = make_items()
    items += [(n + "b", "hf", 0.0, x, s) for n, _, _, x, s in make_items(2)]
    report = evaluate(items, lambda x: x)
    keys = {(k[0], k[1]) for k in report.rows}
    assert keys == {("white", 5.0), ("hf", 0.0)}


def test_report_csv_schema(tmp_path):
    report = evaluate(make_items(), lambda x: x)
    p = tmp_path / "r.csv"
    report.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "noise_kind,input_snr_db,metric,mean,count"
    assert len(lines) == 3  # two metrics for one condition
    for row in lines[1:]:
        kind, snr, metric, mean, count = row.split(",")
        assert int(count) == 4


def test_report_per_utterance_csv(tmp_path):
    report = evaluate(make_items(2), lambda x: x)
    p = tmp_path / "r.csv"
    report.write_csv(p, per_utterance=True)
    lines = p.read_text().splitlines()
    assert lines[0] == "utterance,noise_kind,input_snr_db,metric,value"
    assert len(lines) == 1 + 2 * 2  # two items x two metrics


def test_evaluate_order_independent():
    items = make_items()
    a = evaluate(items, lambda x: x).mean("white", 5.0, "snr_db")
    b = evaluate(items[::-1], lambda x: x).mean("white", 5.0, "snr_db")
    assert a == b


def test_evaluate_length_mismatch_rejected():
    items = make_items(1)
    with pytest.raises(ValueError):
        evaluate(items, lambda x: x[:-1])
