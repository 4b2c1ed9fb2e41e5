"""Train the hybrid denoiser for a handful of steps and enhance a file.

Uses small windows and few steps so it finishes in about a minute on CPU;
raise STEPS / WINDOW for a real run.
"""
import tempfile
from pathlib import Path

import numpy as np

from mdphd import data as D
from mdphd.hybrid import HybridModel
from mdphd.metrics import snr_db
from mdphd.models import build_preset
from mdphd.training import TrainConfig, train

WINDOW = 4096
STEPS = 30

tmp = Path(tempfile.mkdtemp(prefix="mdphd_demo_"))

# corpus: 4 speech surrogates x mixed noise at 5 dB
entries = []
for i in range(4):
    s = D.gen_speech_surrogate(WINDOW * 2, seed=20 + i)
    p = tmp / f"s{i}.wav"
    D.write_wav(p, s)
    entries.append(D.ManifestEntry(str(p), D.SynthNoiseSpec("mixture"), 5.0))
manifest = D.DatasetManifest(entries, noise_only_fraction=0.25)

model = HybridModel(
    build_preset("tasnet-toy", seed=0, window_length=WINDOW, dtype=np.float32),
    build_preset("unet-toy", seed=1, window_length=WINDOW, dtype=np.float32))
print(model.describe())

batches = D.make_batches(manifest, batch_size=2, seed=0,
                         window=WINDOW, hop=WINDOW)
cfg = TrainConfig(max_steps=STEPS, lr=1e-3, decay_interval=1000,
                  out_dir=str(tmp / "run"))
train(model, batches, cfg,
      on_step=lambda s, l: print(f"  step {s:3d} loss {l:10.1f}")
      if s % 10 == 0 else None)

# enhance a held-out mixture
s = D.gen_speech_surrogate(WINDOW, seed=99)
n = D.gen_noise(D.SynthNoiseSpec("mixture"), WINDOW, seed=7)
x, _ = D.mix_at_snr(s, n, 5.0)
est = model.infer(x)
print(f"\ninput SNR  {snr_db(s, x):6.2f} dB")
print(f"output SNR {snr_db(s, est.astype(np.float64)):6.2f} dB "
      f"(checkpoint in {tmp / 'run'})")
