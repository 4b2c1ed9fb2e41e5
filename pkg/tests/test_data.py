"""Corpus handling tests: WAV I/O, mixing, synthesis, slicing, batching."""
import numpy as np
import pytest

from mdphd import data as D


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def test_wav_float32_round_trip(tmp_path):
    w = np.random.default_rng(0).uniform(-0.9, 0.9, 16000)
    p = tmp_path / "a.wav"
    D.write_wav(p, w, fmt="float32")
    r = D.read_wav(p)
    assert np.max(np.abs(r - w)) <= 1e-7


def test_wav_pcm16_round_trip(tmp_path):
    w = np.random.default_rng(1).uniform(-0.9, 0.9, 8000)
    p = tmp_path / "a.wav"
    D.write_wav(p, w, fmt="pcm16")
    r = D.read_wav(p)
    assert np.max(np.abs(r - w)) <= 1.0 / 32768


def test_wav_rejects_wrong_rate(tmp_path):
    from scipy.io import wavfile
    p = tmp_path / "bad.wav"
    wavfile.write(p, 8000, np.zeros(100, dtype=np.int16))
    with pytest.raises(ValueError, match="Hz"):
        D.read_wav(p)


def test_wav_rejects_stereo(tmp_path):
    from scipy.io import wavfile
    p = tmp_path / "bad.wav"
    wavfile.write(p, 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(ValueError, match="mono"):
        D.read_wav(p)


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("snr", [-10.0, 0.0, 5.0, 10.0, 15.0])
def test_mix_at_snr_exact(snr):
    rng = np.random.default_rng(int(snr) + 20)
    s = rng.standard_normal(4000)
    n = rng.standard_normal(4000)
    x, scaled = D.mix_at_snr(s, n, snr)
    measured = 10 * np.log10(np.sum(s * s) / np.sum(scaled * scaled))
    assert abs(measured - snr) <= 1e-9
    np.testing.assert_allclose(x, s + scaled, atol=0)


def test_mix_rejects_silent_inputs():
    with pytest.raises(ValueError):
        D.mix_at_snr(np.zeros(10), np.ones(10), 0.0)
    with pytest.raises(ValueError):
        D.mix_at_snr(np.ones(10), np.zeros(10), 0.0)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def test_highfreq_noise_band_and_rms():
    spec = D.SynthNoiseSpec("highfreq_sine")
    n = D.gen_highfreq_noise(spec, 16384, seed=5)
    assert np.sqrt(np.mean(n * n)) == pytest.approx(1.0, rel=1e-9)
    # spectral energy concentrated in the 1-5 kHz band
    mag = np.abs(np.fft.rfft(n)) ** 2
    freqs = np.fft.rfftfreq(16384, 1.0 / D.SAMPLE_RATE)
    band = (freqs >= 950) & (freqs <= 5050)
    assert mag[band].sum() / mag.sum() >= 0.99


def test_babble_surrogate_band_and_rms():
    spec = D.SynthNoiseSpec("babble_surrogate")
    n = D.gen_babble_surrogate(spec, 16384, seed=6)
    assert np.sqrt(np.mean(n * n)) == pytest.approx(1.0, rel=1e-9)
    mag = np.abs(np.fft.rfft(n)) ** 2
    freqs = np.fft.rfftfreq(16384, 1.0 / D.SAMPLE_RATE)
    band = (freqs >= 80) & (freqs <= 4100)
    assert mag[band].sum() / mag.sum() >= 0.95


def test_synthesis_deterministic():
    spec = D.SynthNoiseSpec("mixture")
    a = D.gen_noise(spec, 8192, seed=7)
    b = D.gen_noise(spec, 8192, seed=7)
    c = D.gen_noise(spec, 8192, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_speech_surrogate_properties():
    s = D.gen_speech_surrogate(16384, seed=9)
    assert np.sqrt(np.mean(s * s)) == pytest.approx(1.0, rel=1e-9)
    # mostly low-frequency energy (below 4 kHz)
    mag = np.abs(np.fft.rfft(s)) ** 2
    freqs = np.fft.rfftfreq(16384, 1.0 / D.SAMPLE_RATE)
    assert mag[freqs <= 4000].sum() / mag.sum() >= 0.99


def test_unknown_noise_kind_rejected():
    with pytest.raises(ValueError):
        D.SynthNoiseSpec("traffic")


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------

def test_slice_windows_counts():
    # exact fit: (len - window) / hop + 1 windows, no padding
    wins = D.slice_windows(np.arange(32768.0), 16384, 8192)
    assert len(wins) == 3
    assert not any(p for _, p in wins)
    # partial tail gets zero-padded and flagged
    wins = D.slice_windows(np.arange(20000.0), 16384, 8192)
    assert len(wins) == 2
    assert wins[1][1] is True
    assert len(wins[1][0]) == 16384
    np.testing.assert_array_equal(wins[1][0][20000 - 8192:], 0.0)


def test_slice_short_signal_padded():
    wins = D.slice_windows(np.ones(100), 16384, 8192)
    assert len(wins) == 1 and wins[0][1] is True


def test_slice_rejects_empty():
    with pytest.raises(ValueError):
        D.slice_windows(np.array([]), 16384, 8192)


# ---------------------------------------------------------------------------
# triplets and manifest
# ---------------------------------------------------------------------------

def test_triplet_additivity_enforced():
    x = np.ones(8)
    s = np.ones(8) * 0.5
    with pytest.raises(ValueError):
        D.SampleTriplet(x, s, np.zeros(8))
    D.SampleTriplet(x, s, x - s)  # ok


def test_manifest_json_round_trip(tmp_path):
    entries = [
        D.ManifestEntry("a.wav", D.SynthNoiseSpec("highfreq_sine"), 5.0,
                        "train"),
        D.ManifestEntry(None, D.SynthNoiseSpec("babble_surrogate"), 0.0,
                        "test", kind="babble"),
        D.ManifestEntry("b.wav", "noise.wav", -5.0, "train"),
    ]
    m = D.DatasetManifest(entries, noise_only_fraction=0.3)
    p = tmp_path / "m.jsonl"
    m.save(p)
    m2 = D.DatasetManifest.load(p, noise_only_fraction=0.3)
    assert len(m2.entries) == 3
    assert isinstance(m2.entries[0].noise, D.SynthNoiseSpec)
    assert m2.entries[1].clean is None
    assert m2.entries[1].noise_kind() == "babble"
    assert m2.entries[2].noise == "noise.wav"
    assert m2.entries[2].snr_db == -5.0


def make_corpus(tmp_path, n=4, length=32768):
    entries = []
    for i in range(n):
        s = D.gen_speech_surrogate(length, seed=100 + i)
        p = tmp_path / f"s{i}.wav"
        D.write_wav(p, s)
        entries.append(D.ManifestEntry(str(p), D.SynthNoiseSpec("mixture"),
                                       5.0))
    return D.DatasetManifest(entries, noise_only_fraction=0.25)


def test_batches_satisfy_additivity(tmp_path):
    man = make_corpus(tmp_path)
    g = D.make_batches(man, batch_size=4, seed=3)
    for _ in range(3):
        x, s, n = next(g)
        assert x.shape == (4, D.WINDOW)
        assert np.max(np.abs(x - (s + n))) <= 1e-6


def test_batches_deterministic_per_seed(tmp_path):
    man = make_corpus(tmp_path)
    a = [next(D.make_batches(man, batch_size=2, seed=11))[0]
         for _ in range(1)][0]
    b = [next(D.make_batches(man, batch_size=2, seed=11))[0]
         for _ in range(1)][0]
    c = next(D.make_batches(man, batch_size=2, seed=12))[0]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_batches_resumable_by_skipping(tmp_path):
    man = make_corpus(tmp_path)
    full = D.make_batches(man, batch_size=2, seed=4)
    ref = [next(full) for _ in range(6)]
    skip = D.make_batches(man, batch_size=2, seed=4)
    for _ in range(3):
        next(skip)
    for i in range(3, 6):
        x, s, n = next(skip)
        assert np.array_equal(x, ref[i][0])


def test_noise_only_fraction(tmp_path):
    man = make_corpus(tmp_path, n=6)
    g = D.make_batches(man, batch_size=1, seed=5)
    total = noise_only = 0
    # one epoch: 6 entries x 3 windows = 18 speech + 6 injected noise-only
    for _ in range(24):
        _, s, _ = next(g)
        total += 1
        noise_only += int(not np.any(s))
    assert noise_only / total == pytest.approx(0.25, abs=0.05)


def test_unreadable_entries_skipped_with_warning(tmp_path):
    man = make_corpus(tmp_path, n=10)
    man.entries[0].clean = str(tmp_path / "missing.wav")
    g = D.make_batches(man, batch_size=2, seed=6)
    with pytest.warns(UserWarning, match="skipping"):
        next(g)


def test_too_many_unreadable_entries_fails(tmp_path):
    man = make_corpus(tmp_path, n=4)
    for e in man.entries[:2]:
        e.clean = str(tmp_path / "missing.wav")
    g = D.make_batches(man, batch_size=2, seed=7)
    with pytest.raises(RuntimeError, match="unreadable"), \
            pytest.warns(UserWarning):
        next(g)


def test_noise_only_entry_loads_as_silent_speech(tmp_path):
    entry = D.ManifestEntry(None, D.SynthNoiseSpec("highfreq_sine"), 5.0)
    x, s, n = D.load_entry_signals(entry, seed=8)
    assert not np.any(s)
    np.testing.assert_array_equal(x, n)
