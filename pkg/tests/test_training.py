"""Optimizer, schedule, train loop and checkpoint tests."""
import numpy as np
import pytest

from mdphd import data as D
from mdphd.autodiff import Parameter
from mdphd.hybrid import HybridModel
from mdphd.models import build_preset
from mdphd.training import (AdamState, CheckpointError, TrainConfig,
                            adam_step, load_checkpoint, lr_at,
                            read_checkpoint, save_checkpoint, train,
                            train_network, _model_arrays)

WINDOW = 2048


def make_hybrid(seed=0):
    t = build_preset("tasnet-toy", seed=seed, window_length=WINDOW,
                     dtype=np.float32)
    u = build_preset("unet-toy", seed=seed + 1, window_length=WINDOW,
                     dtype=np.float32)
    return HybridModel(t, u)


def make_manifest(tmp_path, n=3):
    entries = []
    for i in range(n):
        s = D.gen_speech_surrogate(WINDOW * 2, seed=200 + i)
        p = tmp_path / f"s{i}.wav"
        D.write_wav(p, s)
        entries.append(D.ManifestEntry(str(p), D.SynthNoiseSpec("mixture"),
                                       5.0))
    return D.DatasetManifest(entries, noise_only_fraction=0.25)


# ---------------------------------------------------------------------------
# Adam and schedule
# ---------------------------------------------------------------------------

def test_adam_first_step_is_lr_sized():
    """With bias correction, the first update is ~lr * sign(grad)."""
    p = Parameter(np.array([1.0, -1.0]), "p")
    p.grad = np.array([0.5, -2.0])
    st = AdamState({"p": p})
    adam_step({"p": p}, st, lr=0.01)
    np.testing.assert_allclose(p.data, [1.0 - 0.01, -1.0 + 0.01], atol=1e-6)


def test_adam_converges_on_quadratic():
    p = Parameter(np.array([5.0]), "p")
    st = AdamState({"p": p})
    for _ in range(800):
        p.grad = 2.0 * (p.data - 3.0)
        adam_step({"p": p}, st, lr=0.05)
    assert abs(p.data[0] - 3.0) < 1e-3


def test_adam_rejects_nonfinite_grads():
    p = Parameter(np.ones(2), "w")
    p.grad = np.array([1.0, np.nan])
    st = AdamState({"w": p})
    with pytest.raises(FloatingPointError, match="w"):
        adam_step({"w": p}, st, lr=0.01)


def test_lr_halving_schedule():
    assert lr_at(0, 2e-4, 100) == 2e-4
    assert lr_at(99, 2e-4, 100) == 2e-4
    assert lr_at(100, 2e-4, 100) == 1e-4
    assert lr_at(250, 2e-4, 100) == 5e-5
    with pytest.raises(ValueError):
        lr_at(0, 2e-4, 0)


# ---------------------------------------------------------------------------
# train loop
# ---------------------------------------------------------------------------

def test_train_reduces_loss_and_logs(tmp_path):
    model = make_hybrid()
    man = make_manifest(tmp_path)
    g = D.make_batches(man, batch_size=2, seed=1, window=WINDOW, hop=WINDOW)
    losses = []
    cfg = TrainConfig(max_steps=12, lr=1e-3, decay_interval=100,
                      out_dir=str(tmp_path / "run"))
    train(model, g, cfg, on_step=lambda s, l: losses.append(l))
    assert len(losses) == 12
    assert losses[-1] < losses[0]
    log = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,lr,loss,path_order"
    assert len(log) == 13  # header + one row per step
    orders = [row.split(",")[3] for row in log[1:]]
    assert orders[:4] == ["u2d", "d2u", "u2d", "d2u"]


def test_checkpoint_round_trip_bitwise(tmp_path):
    model = make_hybrid()
    adam = AdamState(model.named_params())
    p = tmp_path / "c.mdph"
    save_checkpoint(p, model, adam, step=7)
    other = make_hybrid(seed=5)
    adam2 = AdamState(other.named_params())
    step = load_checkpoint(p, other, adam2)
    assert step == 7
    a, b = _model_arrays(model), _model_arrays(other)
    assert set(a) == set(b)
    for k in a:
        assert np.array_equal(a[k], b[k]), k
    assert adam2.t == adam.t


def test_checkpoint_magic_and_truncation(tmp_path):
    model = make_hybrid()
    p = tmp_path / "c.mdph"
    save_checkpoint(p, model, step=0)
    raw = p.read_bytes()
    assert raw[:4] == b"MDPH"
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(p)
    p.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(p)


def test_checkpoint_fingerprint_mismatch(tmp_path):
    model = make_hybrid()
    p = tmp_path / "c.mdph"
    save_checkpoint(p, model, step=0)
    t = build_preset("tasnet-toy", seed=0, window_length=2 * WINDOW,
                     dtype=np.float32)
    u = build_preset("unet-toy", seed=1, window_length=2 * WINDOW,
                     dtype=np.float32)
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_checkpoint(p, HybridModel(t, u))


def test_checkpoint_without_optimizer_state(tmp_path):
    model = make_hybrid()
    p = tmp_path / "c.mdph"
    save_checkpoint(p, model, step=0)  # no adam
    other = make_hybrid()
    with pytest.raises(CheckpointError, match="optimizer"):
        load_checkpoint(p, other, AdamState(other.named_params()))


def test_resume_matches_uninterrupted(tmp_path):
    """Interrupted-and-resumed training is bitwise identical to one run."""
    man = make_manifest(tmp_path)

    def batches():
        return D.make_batches(man, batch_size=2, seed=9, window=WINDOW,
                              hop=WINDOW)

    straight = make_hybrid()
    train(straight, batches(),
          TrainConfig(max_steps=8, lr=2e-4, decay_interval=3,
                      out_dir=str(tmp_path / "a")))

    part = make_hybrid()
    train(part, batches(),
          TrainConfig(max_steps=4, lr=2e-4, decay_interval=3,
                      out_dir=str(tmp_path / "b")))
    resumed = make_hybrid()
    adam = AdamState(resumed.named_params())
    step = load_checkpoint(tmp_path / "b" / "checkpoint.mdph", resumed, adam)
    g = batches()
    for _ in range(step):
        next(g)
    train(resumed, g,
          TrainConfig(max_steps=8, lr=2e-4, decay_interval=3,
                      out_dir=str(tmp_path / "c")),
          adam=adam, start_step=step)

    a, b = _model_arrays(straight), _model_arrays(resumed)
    for k in a:
        assert np.array_equal(a[k], b[k]), k


def test_train_halts_on_nonfinite_loss(tmp_path):
    model = make_hybrid()

    def bad_batches():
        while True:
            nan_x = np.full((1, WINDOW), np.nan, dtype=np.float64)
            yield nan_x, nan_x, np.zeros((1, WINDOW))

    with pytest.raises(FloatingPointError):
        train(model, bad_batches(),
              TrainConfig(max_steps=2, out_dir=str(tmp_path / "r")))


def test_train_network_single_model(tmp_path):
    net = build_preset("tasnet-toy", seed=0, window_length=WINDOW,
                       dtype=np.float32)
    man = make_manifest(tmp_path)
    g = D.make_batches(man, batch_size=2, seed=2, window=WINDOW, hop=WINDOW)
    losses = []
    train_network(net, g, steps=10, lr=1e-3,
                  on_step=lambda s, l: losses.append(l))
    assert len(losses) == 10 and losses[-1] < losses[0]
