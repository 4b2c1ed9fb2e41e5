"""Optimization loop, learning-rate schedule and binary checkpoints.

Checkpoints are a flat self-describing binary container (magic ``MDPH``)
holding a JSON header plus raw little-endian array records for parameters,
optimizer buffers and normalization running statistics.  A save/load cycle
is bitwise, so training can resume with results identical to an
uninterrupted run.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hybrid import HybridModel, training_order

__all__ = [
    "AdamState", "adam_step", "lr_at", "TrainConfig", "train", "train_network",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION", "CheckpointError",
]

CHECKPOINT_MAGIC = b"MDPH"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated or mismatched checkpoint files."""


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second-moment buffers and the update counter for Adam."""

    def __init__(self, named_params: dict, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(p.data.shape) for k, p in named_params.items()}
        self.v = {k: np.zeros(p.data.shape) for k, p in named_params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_buffers(self, arrays: dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k] = arrays[f"adam.m.{k}"].copy()
            self.v[k] = arrays[f"adam.v.{k}"].copy()
        self.t = int(arrays["adam.t"][0])


def adam_step(named_params: dict, state: AdamState, lr: float) -> None:
    """One Adam update over all parameters; rejects non-finite gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in named_params.items():
        g = np.asarray(p.grad, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)


def lr_at(step: int, lr0: float, decay_interval: int) -> float:
    """Step-decay schedule: lr0 halved every decay_interval steps."""
    if decay_interval < 1:
        raise ValueError("decay_interval must be positive")
    return lr0 * 0.5 ** (step // decay_interval)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    max_steps: int = 300
    lr: float = 2e-4
    decay_interval: int = 0          # 0 -> max_steps // 3
    loss_kind: str = "l1"
    checkpoint_every: int = 0        # 0 -> only at the end
    out_dir: str = "runs/default"
    log_name: str = "train_log.csv"

    def resolved_decay(self) -> int:
        return self.decay_interval if self.decay_interval > 0 \
            else max(1, self.max_steps // 3)


def train(model: HybridModel, batches, cfg: TrainConfig,
          adam: AdamState | None = None, start_step: int = 0,
          on_step=None) -> AdamState:
    """Run the training loop from start_step to cfg.max_steps.

    `batches` yields (x, s, n) arrays; the caller is responsible for
    positioning the stream when resuming (the batch stream is a pure
    function of its seed, so skipping start_step batches reproduces the
    uninterrupted run exactly).
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if adam is None:
        adam = AdamState(model.named_params())
    decay = cfg.resolved_decay()
    log_path = out_dir / cfg.log_name
    ckpt_path = out_dir / "checkpoint.mdph"

    log_mode = "a" if start_step > 0 and log_path.exists() else "w"
    with open(log_path, log_mode, newline="") as log_fh:
        log = csv.writer(log_fh)
        if log_mode == "w":
            log.writerow(["step", "lr", "loss", "path_order"])
        for step in range(start_step, cfg.max_steps):
            model.step_counter = step
            x, s, n = next(batches)
            lr = lr_at(step, cfg.lr, decay)
            model.zero_grad()
            loss = model.train_step_loss(x, s, n, cfg.loss_kind)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise FloatingPointError(
                    f"non-finite loss at step {step}; last good checkpoint: "
                    f"{ckpt_path if ckpt_path.exists() else 'none'}")
            from .autodiff import backward
            backward(loss)
            adam_step(model.named_params(), adam, lr)
            order = training_order(step).value if model.mode == "alternating" \
                else model.mode
            log.writerow([step, f"{lr:.10g}", f"{loss_val:.10g}", order])
            if on_step is not None:
                on_step(step, loss_val)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                log_fh.flush()
                save_checkpoint(ckpt_path, model, adam, step=step + 1)
    save_checkpoint(ckpt_path, model, adam, step=cfg.max_steps)
    return adam


def train_network(net, batches, steps: int, lr: float = 2e-4,
                  decay_interval: int = 0, loss_kind: str = "l1",
                  adam: AdamState | None = None, on_step=None) -> AdamState:
    """Train a single network (no cascade) on (x, s, n) batches."""
    from .autodiff import Tensor, backward
    from .objectives import base_loss
    if adam is None:
        adam = AdamState(net.params)
    decay = decay_interval if decay_interval > 0 else max(1, steps // 3)
    for step in range(steps):
        x, s, n = next(batches)
        net.zero_grad()
        loss = base_loss(x, s, n, net.forward(Tensor(x.astype(net.dtype)),
                                              train=True), loss_kind)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise FloatingPointError(f"non-finite loss at step {step}")
        backward(loss)
        adam_step(net.params, adam, lr_at(step, lr, decay))
        if on_step is not None:
            on_step(step, loss_val)
    return adam


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def _write_record(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    name_b = name.encode("utf-8")
    dtype_b = arr.dtype.str.lstrip("<=|").encode("ascii")  # e.g. f8, f4, i8
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<I", len(dtype_b)))
    fh.write(dtype_b)
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise CheckpointError("truncated checkpoint file")
    return buf


def _read_record(fh) -> tuple[str, np.ndarray]:
    name_len, = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    dt_len, = struct.unpack("<I", _read_exact(fh, 4))
    dtype = np.dtype("<" + _read_exact(fh, dt_len).decode("ascii"))
    rank, = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank))
    nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if rank else dtype.itemsize
    arr = np.frombuffer(_read_exact(fh, nbytes), dtype=dtype).reshape(shape)
    return name, arr.copy()


def _model_arrays(model: HybridModel) -> dict[str, np.ndarray]:
    out = {f"tasnet.{k}": v for k, v in model.tasnet.state_arrays().items()}
    out.update({f"unet.{k}": v for k, v in model.unet.state_arrays().items()})
    return out


def save_checkpoint(path, model: HybridModel, adam: AdamState | None = None,
                    step: int = 0) -> None:
    arrays = _model_arrays(model)
    if adam is not None:
        arrays.update(adam.buffers())
    header = {
        "step": step,
        "mode": model.mode,
        "step_counter": model.step_counter,
        "tasnet_fingerprint": model.tasnet.fingerprint(),
        "unet_fingerprint": model.unet.fingerprint(),
        "tasnet_config": model.tasnet.config_dict(),
        "unet_config": model.unet.config_dict(),
        "has_optimizer": adam is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            _write_record(fh, name, arrays[name])
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint file into (header, arrays) without a model."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        version, = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        blob_len, = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        count, = struct.unpack("<I", _read_exact(fh, 4))
        arrays = dict(_read_record(fh) for _ in range(count))
    return header, arrays


def load_checkpoint(path, model: HybridModel,
                    adam: AdamState | None = None) -> int:
    """Restore model (and optionally optimizer) state; returns the step."""
    header, arrays = read_checkpoint(path)
    for sub, key in ((model.tasnet, "tasnet_fingerprint"),
                     (model.unet, "unet_fingerprint")):
        if header[key] != sub.fingerprint():
            raise CheckpointError(
                f"{path}: {sub.kind} architecture fingerprint mismatch "
                f"(checkpoint {header[key][:12]}..., model {sub.fingerprint()[:12]}...)")
    prefix_t = {k[len("tasnet."):]: v for k, v in arrays.items()
                if k.startswith("tasnet.")}
    prefix_u = {k[len("unet."):]: v for k, v in arrays.items()
                if k.startswith("unet.")}
    model.tasnet.load_arrays(prefix_t)
    model.unet.load_arrays(prefix_u)
    model.step_counter = int(header.get("step_counter", header["step"]))
    if adam is not None:
        if not header.get("has_optimizer"):
            raise CheckpointError(f"{path}: checkpoint has no optimizer state")
        adam.load_buffers(arrays)
    return int(header["step"])
