"""Command-line entry point: corpus synthesis, training, enhancement,
evaluation and self-checks.

Exit codes: 0 success, 1 contract/validation error, 2 numeric failure
(NaN loss or a failed gradient check).  Set MDPHD_DETERMINISTIC=1 to force
deterministic behaviour globally (seed defaults pinned to 0, --jobs forced
to 1).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics as M
from .autodiff import Tensor, check_gradients
from .hybrid import HybridModel
from .models import (PRESETS, TasNet, TasNetConfig, UNet, UNetConfig,
                     build_preset)
from .objectives import LOSS_KINDS, base_loss
from .training import (AdamState, CheckpointError, TrainConfig,
                       load_checkpoint, read_checkpoint, save_checkpoint,
                       train)

__all__ = ["main"]

_NOISE_KINDS = {"highfreq": "highfreq_sine", "babble": "babble_surrogate",
                "both": "mixture"}
_PRESET_FAMILIES = {
    "toy": ("tasnet-toy", "unet-toy"),
    "1.5m": ("tasnet-1.5m", "unet-1.5m"),
    "3m": ("tasnet-3m", "unet-3m"),
}


def _deterministic() -> bool:
    return os.environ.get("MDPHD_DETERMINISTIC", "") == "1"


def _default_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if _deterministic():
        return 0
    return int(np.random.SeedSequence().entropy % (2 ** 31))


def _resolve_jobs(args) -> int:
    jobs = getattr(args, "jobs", 1)
    return 1 if _deterministic() else max(1, jobs)


def _print_config(name: str, conf: dict) -> None:
    print(f"[{name}] resolved config: "
          + json.dumps(conf, sort_keys=True, default=str))


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _build_hybrid(preset: str, seed: int, window: int,
                  dtype=np.float32, mode: str = "alternating",
                  both_paths: bool = False) -> HybridModel:
    if preset not in _PRESET_FAMILIES:
        raise ValueError(f"unknown preset family {preset!r}; "
                         f"choose from {sorted(_PRESET_FAMILIES)}")
    t_name, u_name = _PRESET_FAMILIES[preset]
    tasnet = build_preset(t_name, seed=seed, window_length=window, dtype=dtype)
    unet = build_preset(u_name, seed=seed + 1, window_length=window, dtype=dtype)
    return HybridModel(tasnet, unet, mode=mode, both_paths_per_step=both_paths)


def _model_from_checkpoint(path, mode: str = "alternating") -> HybridModel:
    header, _ = read_checkpoint(path)
    tc = dict(header["tasnet_config"])
    uc = dict(header["unet_config"])
    tc.pop("kind", None)
    uc.pop("kind", None)
    uc["levels"] = tuple(tuple(lv) for lv in uc["levels"])
    uc["stft_window"] = int(uc.get("stft_window", 512))
    model = HybridModel(TasNet(TasNetConfig(**tc), dtype=np.float32),
                        UNet(UNetConfig(**uc), dtype=np.float32),
                        mode=mode)
    load_checkpoint(path, model)
    return model


# ---------------------------------------------------------------------------
# mix
# ---------------------------------------------------------------------------

def cmd_mix(args) -> int:
    seed = _default_seed(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    if manifest_path.exists() and not args.force:
        raise ValueError(f"{manifest_path} exists; pass --force to overwrite")

    kinds = []
    for tok in args.noise.split(","):
        tok = tok.strip()
        if tok in _NOISE_KINDS:
            kinds.append(D.SynthNoiseSpec(_NOISE_KINDS[tok]))
        elif Path(tok).is_file():
            kinds.append(tok)
        else:
            raise ValueError(f"noise {tok!r} is neither a known kind "
                             f"({sorted(_NOISE_KINDS)}) nor a WAV file")
    snrs = [float(v) for v in args.snr.split(",")] if args.snr else [5.0]

    if args.silence:
        cleans = [None]
    else:
        clean_dir = Path(args.clean)
        cleans = sorted(clean_dir.glob("*.wav"))
        if not cleans:
            raise ValueError(f"no WAV files in {clean_dir}")

    _print_config("mix", {"clean": args.clean, "silence": args.silence,
                          "noise": args.noise, "snr": snrs, "out": str(out_dir),
                          "seed": seed, "split": args.split,
                          "jobs": _resolve_jobs(args)})

    tasks = []
    idx = 0
    for clean in cleans:
        for kind in kinds:
            for snr in (snrs if clean is not None else [0.0]):
                tasks.append((idx, clean, kind, snr))
                idx += 1
            if clean is None:
                break

    entries = [None] * len(tasks)

    def run(task):
        i, clean, kind, snr = task
        rng_seed = int(np.random.default_rng((seed, i)).integers(2 ** 31))
        kind_tag = kind.kind if isinstance(kind, D.SynthNoiseSpec) else Path(kind).stem
        if clean is not None:
            s = D.read_wav(clean)
            stem = f"{clean.stem}__{kind_tag}__snr{snr:g}"
        else:
            s = None
            stem = f"silence__{kind_tag}__{i}"
        length = len(s) if s is not None else D.WINDOW
        if isinstance(kind, D.SynthNoiseSpec):
            n = D.gen_noise(kind, length, rng_seed)
        else:
            n = D.read_wav(kind)
            if len(n) < length:
                n = np.tile(n, -(-length // len(n)))
            n = n[:length]
        if s is not None:
            x, n = D.mix_at_snr(s, n, snr)
        else:
            x = n
        paths = {}
        for tag, w in (("x", x), ("s", s), ("n", n)):
            if w is None:
                continue
            p = out_dir / f"{stem}__{tag}.wav"
            D.write_wav(p, w, fmt="float32")
            paths[tag] = str(p)
        entries[i] = D.ManifestEntry(paths.get("s"), paths["n"], snr,
                                     split=args.split, kind=kind_tag)

    _map_jobs(run, tasks, _resolve_jobs(args))
    D.DatasetManifest(entries).save(manifest_path)
    print(f"wrote {len(entries)} trios and {manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    seed = _default_seed(args)
    if args.loss not in LOSS_KINDS:
        raise ValueError(f"loss must be one of {LOSS_KINDS}")
    manifest = D.DatasetManifest.load(args.manifest,
                                      noise_only_fraction=args.noise_only_fraction)
    model = _build_hybrid(args.preset, seed, args.window,
                          mode=args.path_mode,
                          both_paths=args.both_paths_per_step)
    cfg = TrainConfig(max_steps=args.steps, lr=args.lr,
                      decay_interval=args.decay_interval,
                      loss_kind=args.loss, checkpoint_every=args.checkpoint_every,
                      out_dir=args.out)
    _print_config("train", {"manifest": args.manifest, "preset": args.preset,
                            "loss": args.loss, "path_mode": args.path_mode,
                            "steps": args.steps, "seed": seed,
                            "lr": args.lr, "decay_interval": cfg.resolved_decay(),
                            "batch_size": args.batch_size, "window": args.window,
                            "out": args.out,
                            "params": model.param_count()})
    adam = AdamState(model.named_params())
    start_step = 0
    if args.resume:
        start_step = load_checkpoint(args.resume, model, adam)
        print(f"resumed from {args.resume} at step {start_step}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.steps == 0:
        save_checkpoint(out_dir / "checkpoint.mdph", model, adam, step=0)
        print("steps=0: wrote initial checkpoint")
        return 0

    batches = D.make_batches(manifest, batch_size=args.batch_size, seed=seed,
                             window=args.window, hop=args.window // 2)
    for _ in range(start_step):
        next(batches)
    try:
        train(model, batches, cfg, adam=adam, start_step=start_step,
              on_step=(lambda s, l: print(f"step {s}: loss {l:.6f}"))
              if args.verbose else None)
    except FloatingPointError as exc:
        print(f"training halted: {exc}", file=sys.stderr)
        return 2
    print(f"finished {args.steps} steps; checkpoint at {out_dir / 'checkpoint.mdph'}")
    return 0


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------

def enhance_waveform(model: HybridModel, x: np.ndarray) -> np.ndarray:
    """Slice, run inference per window, reassemble with 50% overlap and a
    triangular cross-fade; output length equals input length."""
    window = model.window_length
    hop = window // 2
    length = len(x)
    padded = np.pad(x, (0, max(0, window - length)))
    pieces = D.slice_windows(padded, window, hop)
    fade = np.bartlett(window + 2)[1:-1]  # strictly positive triangle
    acc = np.zeros(len(pieces[-1][0]) + (len(pieces) - 1) * hop)
    env = np.zeros_like(acc)
    for i, (chunk, _) in enumerate(pieces):
        est = model.infer(chunk).astype(np.float64)
        lo = i * hop
        acc[lo:lo + window] += est * fade
        env[lo:lo + window] += fade
    return (acc / env)[:length]


def cmd_enhance(args) -> int:
    mode = {"average": "alternating", "u2d": "u2d", "d2u": "d2u"}[args.mode]
    model = _model_from_checkpoint(args.ckpt, mode=mode)
    src = Path(getattr(args, "in"))
    dst = Path(args.out)
    if src.is_dir():
        files = sorted(src.glob("*.wav"))
        if not files:
            raise ValueError(f"no WAV files in {src}")
        dst.mkdir(parents=True, exist_ok=True)
        pairs = [(f, dst / f.name) for f in files]
    else:
        if dst.is_dir():
            dst = dst / src.name
        pairs = [(src, dst)]
    _print_config("enhance", {"ckpt": args.ckpt, "in": str(src),
                              "out": str(args.out), "mode": args.mode,
                              "window": model.window_length,
                              "jobs": _resolve_jobs(args)})

    def run(pair):
        fin, fout = pair
        D.write_wav(fout, enhance_waveform(model, D.read_wav(fin)),
                    fmt="float32")

    _map_jobs(run, pairs, _resolve_jobs(args))
    print(f"enhanced {len(pairs)} file(s)")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _manifest_eval_items(manifest: D.DatasetManifest, split: str, seed: int,
                         window: int):
    """Yield (name, noise_kind, input_snr, x-window, s-window) test items;
    padded tails and noise-only entries are excluded."""
    entries = manifest.split(split)
    rng = np.random.default_rng(seed)
    for k, entry in enumerate(entries):
        entry_seed = int(rng.integers(2 ** 31))
        if entry.clean is None:
            continue
        x, s, _ = D.load_entry_signals(entry, entry_seed, min_length=window)
        xs = D.slice_windows(x, window, window // 2)
        ss = D.slice_windows(s, window, window // 2)
        for j, ((xw, padded), (sw, _)) in enumerate(zip(xs, ss)):
            if padded and len(xs) > 1:
                continue
            yield (f"entry{k}:win{j}", entry.noise_kind(), entry.snr_db, xw, sw)


def cmd_eval(args) -> int:
    seed = _default_seed(args)
    if bool(args.ckpt) == bool(args.pairs):
        raise ValueError("pass exactly one of --ckpt or --pairs")
    _print_config("eval", {"ckpt": args.ckpt, "pairs": args.pairs,
                           "manifest": args.manifest, "out": args.out,
                           "seed": seed, "split": args.split,
                           "per_utterance": args.per_utterance})
    if args.ckpt:
        if not args.manifest:
            raise ValueError("--ckpt evaluation needs --manifest")
        model = _model_from_checkpoint(args.ckpt)
        manifest = D.DatasetManifest.load(args.manifest)
        items = list(_manifest_eval_items(manifest, args.split, seed,
                                          model.window_length))
        if not items:
            raise ValueError(f"manifest has no speech entries for split {args.split!r}")
        report = M.evaluate(items, lambda x: enhance_waveform(model, x))
    else:
        noisy_dir, enh_dir, clean_dir = (Path(p) for p in args.pairs)
        items = []
        for f in sorted(clean_dir.glob("*.wav")):
            noisy_f, enh_f = noisy_dir / f.name, enh_dir / f.name
            if not (noisy_f.exists() and enh_f.exists()):
                print(f"warning: skipping {f.name}: missing noisy/enhanced mate",
                      file=sys.stderr)
                continue
            s = D.read_wav(f)
            x = D.read_wav(noisy_f)
            est = D.read_wav(enh_f)
            cond = round(M.snr_db(s, x))
            items.append((f.name, "pairs", cond, est, s))
        if not items:
            raise ValueError("no matched WAV trios found")
        report = M.evaluate(items, lambda est: est)
    report.write_csv(args.out, per_utterance=args.per_utterance)
    print(f"wrote {args.out} ({len(items)} items)")
    return 0


# ---------------------------------------------------------------------------
# gradcheck / describe
# ---------------------------------------------------------------------------

def _op_gradchecks(rng) -> float:
    """Finite-difference checks for individual autodiff ops; worst rel err."""
    from .autodiff import (batch_renorm, conv1d, conv2d, l1_norm, RenormState,
                           stft_pair, istft_from_pair, transposed_conv1d,
                           transposed_conv2d)
    from .dsp import StftConfig
    worst = 0.0
    x = rng.standard_normal((2, 64))
    w = rng.standard_normal((4, 1, 3)) * 0.3
    worst = max(worst, check_gradients(
        lambda a: l1_norm(conv1d(a[0], a[1], stride=2, dilation=2)),
        [x.reshape(2, 1, 64), w]))
    w2 = rng.standard_normal((3, 2, 3, 3)) * 0.3
    xi = rng.standard_normal((2, 2, 8, 10))
    worst = max(worst, check_gradients(
        lambda a: l1_norm(conv2d(a[0], a[1], stride=(2, 2))), [xi, w2]))
    g = rng.standard_normal(4) * 0.5 + 1.0
    b = rng.standard_normal(4) * 0.1
    worst = max(worst, check_gradients(
        lambda a: l1_norm(batch_renorm(a[0], a[1], a[2], RenormState(4),
                                       train=True)),
        [rng.standard_normal((2, 4, 16)), g, b]))
    cfg = StftConfig(64, 32)
    xs = rng.standard_normal((1, 256))
    def stft_loss(a):
        re, im = stft_pair(a[0], cfg)
        return l1_norm(istft_from_pair(re, im, cfg, 256))
    worst = max(worst, check_gradients(stft_loss, [xs]))
    return worst


def network_gradcheck(net, rng, window: int = 1024,
                      num_params: int = 6, entries_per_param: int = 4) -> float:
    """End-to-end finite-difference check of a network's parameter
    gradients on a random L1 objective; samples a few entries from a few
    parameter tensors to keep runtime bounded.  Returns worst rel error."""
    from .autodiff import backward
    # evaluate at a generic point: zero-initialized biases can leave whole
    # regions exactly on the leaky-relu kink, where finite differences and
    # the subgradient legitimately disagree
    for p in net.params.values():
        p.data = p.data + (rng.standard_normal(p.data.shape) * 0.05
                           ).astype(p.data.dtype)
    x = (rng.standard_normal((1, window)) * 0.2).astype(net.dtype)
    s = (rng.standard_normal((1, window)) * 0.2).astype(net.dtype)
    n = x - s

    def loss_value() -> float:
        out = base_loss(x, s, n, net.forward(Tensor(x), train=False), "l1")
        return float(out.data)

    net.zero_grad()
    loss = base_loss(x, s, n, net.forward(Tensor(x), train=False), "l1")
    backward(loss)
    analytic = {k: p.grad.copy() for k, p in net.params.items()}

    names = list(net.params)
    picked = rng.choice(len(names), size=min(num_params, len(names)),
                        replace=False)
    got, fd = [], []
    for pi in picked:
        p = net.params[names[pi]]
        flat = p.data.reshape(-1)
        for ei in rng.choice(flat.size,
                             size=min(entries_per_param, flat.size),
                             replace=False):
            v = float(flat[ei])
            h = 1e-5 * (1.0 + abs(v))
            flat[ei] = v + h
            fp = loss_value()
            flat[ei] = v - h
            fm = loss_value()
            flat[ei] = v
            fd.append((fp - fm) / (2.0 * h))
            got.append(float(analytic[names[pi]].reshape(-1)[ei]))
    got = np.array(got)
    fd = np.array(fd)
    denom = max(np.linalg.norm(fd), np.linalg.norm(got), 1e-12)
    return float(np.linalg.norm(got - fd)) / denom


def cmd_gradcheck(args) -> int:
    seed = _default_seed(args)
    rng = np.random.default_rng(seed)
    _print_config("gradcheck", {"preset": args.preset, "seed": seed})
    worst_ops = _op_gradchecks(rng)
    print(f"op-level worst relative error: {worst_ops:.3e} (threshold 1e-4)")

    worst_e2e = 0.0
    for name in _PRESET_FAMILIES[args.preset]:
        net = build_preset(name, seed=seed, window_length=1024,
                           dtype=np.float64)
        err = network_gradcheck(net, rng)
        worst_e2e = max(worst_e2e, err)
        print(f"{name}: end-to-end worst relative error {err:.3e} "
              "(threshold 1e-3)")
    if worst_ops > 1e-4 or worst_e2e > 1e-3:
        print("gradcheck FAILED", file=sys.stderr)
        return 2
    print("gradcheck passed")
    return 0


def cmd_describe(args) -> int:
    names = [args.preset] if args.preset in PRESETS \
        else list(_PRESET_FAMILIES[args.preset]) if args.preset in _PRESET_FAMILIES \
        else None
    if names is None:
        raise ValueError(f"unknown preset {args.preset!r}; choose from "
                         f"{sorted(PRESETS) + sorted(_PRESET_FAMILIES)}")
    _print_config("describe", {"preset": args.preset})
    for name in names:
        net = build_preset(name, seed=0, dtype=np.float32)
        print(f"== {name} ==")
        print(net.describe())
        print(f"param_count: {net.param_count()}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mdphd",
        description="Hybrid time-domain / T-F-domain speech enhancement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add_seed_jobs(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: random; 0 under MDPHD_DETERMINISTIC=1)")
        sp.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for file processing")

    sp = sub.add_parser("mix", help="synthesize a noisy corpus + manifest")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--clean", help="directory of clean 16 kHz mono WAVs")
    g.add_argument("--silence", action="store_true",
                   help="emit noise-only examples instead of mixtures")
    sp.add_argument("--noise", required=True,
                    help="comma list of kinds (highfreq, babble, both) or WAV paths")
    sp.add_argument("--snr", default="5", help="comma list of SNRs in dB")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--split", default="train", choices=("train", "test"))
    sp.add_argument("--force", action="store_true",
                    help="overwrite an existing manifest")
    add_seed_jobs(sp)
    sp.set_defaults(fn=cmd_mix)

    sp = sub.add_parser("train", help="train the hybrid model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--preset", default="toy", choices=sorted(_PRESET_FAMILIES))
    sp.add_argument("--loss", default="l1", choices=LOSS_KINDS)
    sp.add_argument("--path-mode", default="alternating",
                    choices=("alternating", "u2d", "d2u"))
    sp.add_argument("--both-paths-per-step", action="store_true",
                    help="optimize both cascade orders every step")
    sp.add_argument("--steps", type=int, default=300)
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--lr", type=float, default=2e-4)
    sp.add_argument("--decay-interval", type=int, default=0,
                    help="halve lr every N steps (default: steps/3)")
    sp.add_argument("--window", type=int, default=D.WINDOW)
    sp.add_argument("--noise-only-fraction", type=float, default=0.25)
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--verbose", action="store_true")
    add_seed_jobs(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("enhance", help="denoise WAV file(s) with a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", required=True, help="input WAV or directory")
    sp.add_argument("--out", required=True, help="output WAV or directory")
    sp.add_argument("--mode", default="average",
                    choices=("average", "u2d", "d2u"))
    add_seed_jobs(sp)
    sp.set_defaults(fn=cmd_enhance)

    sp = sub.add_parser("eval", help="score a checkpoint or enhanced files")
    sp.add_argument("--ckpt")
    sp.add_argument("--pairs", nargs=3,
                    metavar=("NOISY_DIR", "ENHANCED_DIR", "CLEAN_DIR"))
    sp.add_argument("--manifest")
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--out", required=True, help="report CSV path")
    sp.add_argument("--per-utterance", action="store_true")
    add_seed_jobs(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--preset", default="toy", choices=sorted(_PRESET_FAMILIES))
    add_seed_jobs(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("describe", help="print architecture summaries")
    sp.add_argument("--preset", default="toy")
    sp.set_defaults(fn=cmd_describe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
