"""Synthesize a tiny noisy-speech corpus with exact SNRs.

Generates speech surrogates, mixes them with high-frequency sinusoid and
babble-surrogate noise at pinned SNRs, and writes WAV trios + a manifest.
"""
import tempfile
from pathlib import Path

import numpy as np

from mdphd import data as D
from mdphd.metrics import snr_db

out = Path(tempfile.mkdtemp(prefix="mdphd_corpus_"))
entries = []
for i in range(2):
    s = D.gen_speech_surrogate(D.WINDOW * 2, seed=10 + i)
    for kind in ("highfreq_sine", "babble_surrogate", "mixture"):
        for snr in (0.0, 5.0):
            n = D.gen_noise(D.SynthNoiseSpec(kind), len(s), seed=100 + i)
            x, scaled = D.mix_at_snr(s, n, snr)
            stem = out / f"utt{i}__{kind}__snr{snr:g}"
            D.write_wav(f"{stem}__x.wav", x)
            D.write_wav(f"{stem}__s.wav", s)
            D.write_wav(f"{stem}__n.wav", scaled)
            entries.append(D.ManifestEntry(f"{stem}__s.wav", f"{stem}__n.wav",
                                           snr, kind=kind))
            measured = snr_db(s, x)  # SNR of x treating scaled noise as error
            print(f"utt{i} {kind:16s} requested {snr:5.1f} dB "
                  f"measured {10*np.log10(np.sum(s**2)/np.sum(scaled**2)):8.4f} dB")

man = out / "manifest.jsonl"
D.DatasetManifest(entries).save(man)
print(f"\nwrote {len(entries)} trios under {out}")
print(f"manifest: {man}")
