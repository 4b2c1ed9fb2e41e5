"""The two domain networks: a reduced dilated-conv TasNet operating on raw
waveforms, and a 2-D U-Net that estimates a ratio mask on the log-magnitude
spectrogram. Both are config-driven; exact layer widths come from presets.

Both networks map a (batch, window) waveform tensor to a same-shaped speech
estimate. The U-Net wraps its own STFT/iSTFT so the hand-off between
networks is always a waveform.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import (Tensor, Parameter, RenormState, batch_renorm, concat,
                       conv1d, conv2d, transposed_conv1d, transposed_conv2d,
                       stft_pair, istft_from_pair, log_mag)
from .dsp import StftConfig, frame_layout, DEFAULT_LOG_FLOOR

__all__ = ["TasNetConfig", "UNetConfig", "TasNet", "UNet",
           "build_tasnet", "build_unet", "PRESETS", "build_preset"]

LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TasNetConfig:
    channels: int = 32
    kernel_size: int = 3
    num_blocks: int = 6
    dilation_base: int = 2
    dilation_cycle: int = 0        # 0: never reset the doubling
    outer_stride: int = 16
    up_channels: int = 8           # width of the full-rate stage after upsampling
    window_length: int = 16384

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.window_length % self.outer_stride != 0:
            raise ValueError("window_length must be divisible by outer_stride")

    def dilation(self, block: int) -> int:
        i = block % self.dilation_cycle if self.dilation_cycle > 0 else block
        return self.dilation_base ** i

    @property
    def outer_kernel(self) -> int:
        return 2 * self.outer_stride + 1

    def receptive_field(self) -> int:
        """Span of input samples influencing one output sample."""
        rf = 1 + 2 * ((self.kernel_size - 1) // 2) * sum(
            self.dilation(i) for i in range(self.num_blocks))
        return rf * self.outer_stride + 2 * (self.outer_kernel - 1)


@dataclass(frozen=True)
class UNetConfig:
    # one (kernel_h, kernel_w, stride_h, stride_w, channels) tuple per level
    levels: tuple = ((3, 3, 2, 2, 16), (3, 3, 2, 2, 32), (3, 3, 2, 2, 32))
    window_length: int = 16384
    stft_window: int = 512
    stft_hop: int = 256
    log_floor: float = DEFAULT_LOG_FLOOR
    dec_floor: int = 8             # decoder width at the full-resolution level

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(self.stft_window, self.stft_hop)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                     slope: float = LEAKY_SLOPE) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Network:
    """Base container: named parameters, renorm states, config fingerprint."""

    kind = "network"

    def __init__(self, config, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.renorms: dict[str, RenormState] = {}

    # -- parameter bookkeeping ------------------------------------------

    def _add_param(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = Parameter(data.astype(self.dtype), name)
        self.params[name] = p
        return p

    def _add_renorm(self, name: str, channels: int) -> tuple:
        gamma = self._add_param(f"{name}.gamma", np.ones(channels))
        beta = self._add_param(f"{name}.beta", np.zeros(channels))
        state = RenormState(channels)
        self.renorms[name] = state
        return gamma, beta, state

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def config_dict(self) -> dict:
        d = asdict(self.config)
        d["kind"] = self.kind
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.config_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.params.items()}
        for name, st in self.renorms.items():
            for k, v in st.state_arrays().items():
                arrays[f"{name}#{k}"] = v
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name} in checkpoint")
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = arrays[name].astype(self.dtype).copy()
        for name, st in self.renorms.items():
            st.load_arrays({k: arrays[f"{name}#{k}"]
                            for k in ("running_mean", "running_var", "num_updates")})


# ---------------------------------------------------------------------------
# TasNet (reduced): strided in-conv, dilated residual blocks, t-conv out
# ---------------------------------------------------------------------------

class TasNet(Network):
    kind = "tasnet"

    def __init__(self, config: TasNetConfig, seed: int = 0, dtype=np.float64):
        super().__init__(config, dtype)
        cfg = config
        rng = np.random.default_rng(seed)
        c, k = cfg.channels, cfg.kernel_size
        ko = cfg.outer_kernel

        self._add_param("in.kernel", _kaiming_uniform(rng, (c, 1, ko), ko))
        self._add_param("in.bias", np.zeros((c, 1)))
        for i in range(cfg.num_blocks):
            fan = c * k
            self._add_param(f"block{i}.kernel", _kaiming_uniform(rng, (c, c, k), fan))
            self._add_param(f"block{i}.bias", np.zeros((c, 1)))
            self._add_renorm(f"block{i}.norm", c)
        # transposed conv shares the conv kernel layout (c_down, c_up, ko)
        cu = cfg.up_channels
        self._add_param("up.kernel", _kaiming_uniform(rng, (c, cu, ko), c * ko))
        self._add_param("up.bias", np.zeros((cu, 1)))
        self._add_renorm("up.norm", cu)
        self._add_param("out.kernel", _kaiming_uniform(rng, (1, cu, 1), cu))
        self._add_param("out.bias", np.zeros((1, 1)))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        """(B, T) waveform -> (B, T) speech estimate."""
        cfg = self.config
        b, t = x.data.shape
        if t != cfg.window_length:
            raise ValueError(f"expected window of {cfg.window_length} samples, got {t}")
        p = self.params
        h0 = (conv1d(x.reshape(b, 1, t), p["in.kernel"],
                     stride=cfg.outer_stride)
              + p["in.bias"]).leaky_relu(LEAKY_SLOPE)
        h = h0
        for i in range(cfg.num_blocks):
            z = conv1d(h, p[f"block{i}.kernel"], dilation=cfg.dilation(i)) \
                + p[f"block{i}.bias"]
            z = batch_renorm(z, p[f"block{i}.norm.gamma"], p[f"block{i}.norm.beta"],
                             self.renorms[f"block{i}.norm"], train)
            h = h + z.leaky_relu(LEAKY_SLOPE)
        # separator output gates the encoder features channel-wise, the
        # time-domain analogue of ratio masking: the dilated stack only has
        # to decide how much of each learned band to keep at each frame
        h = h0 * h.sigmoid()
        h = transposed_conv1d(h, p["up.kernel"], cfg.outer_stride, t) + p["up.bias"]
        h = batch_renorm(h, p["up.norm.gamma"], p["up.norm.beta"],
                         self.renorms["up.norm"], train)
        h = h.leaky_relu(LEAKY_SLOPE)
        h = conv1d(h, p["out.kernel"]) + p["out.bias"]
        # global residual: the decoder predicts a correction to the input,
        # so the identity mapping is available from the start
        return x + h.reshape(b, t)

    def describe(self) -> str:
        cfg = self.config
        lines = [f"TasNet (reduced): {self.param_count()} parameters",
                 f"  window {cfg.window_length}, outer stride {cfg.outer_stride}, "
                 f"receptive field ~{cfg.receptive_field()} samples",
                 f"  in   : conv1d 1->{cfg.channels} k={cfg.outer_kernel} "
                 f"s={cfg.outer_stride}"]
        for i in range(cfg.num_blocks):
            lines.append(f"  block{i}: dilated conv1d {cfg.channels}->{cfg.channels} "
                         f"k={cfg.kernel_size} d={cfg.dilation(i)} + renorm + "
                         f"leaky_relu, residual")
        lines.append(f"  up   : t-conv1d {cfg.channels}->{cfg.up_channels} "
                     f"k={cfg.outer_kernel} s={cfg.outer_stride} + renorm + leaky_relu")
        lines.append(f"  out  : conv1d {cfg.up_channels}->1 k=1 (linear), "
                     f"added to the input (global residual)")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# U-Net: log-magnitude in, sigmoid ratio mask out, noisy phase kept
# ---------------------------------------------------------------------------

class UNet(Network):
    kind = "unet"

    def __init__(self, config: UNetConfig, seed: int = 0, dtype=np.float64):
        super().__init__(config, dtype)
        cfg = config
        rng = np.random.default_rng(seed)
        levels = cfg.levels
        enc_in = [1] + [lv[4] for lv in levels[:-1]]
        for i, (kh, kw, sh, sw, ch) in enumerate(levels):
            fan = enc_in[i] * kh * kw
            self._add_param(f"enc{i}.kernel",
                            _kaiming_uniform(rng, (ch, enc_in[i], kh, kw), fan))
            self._add_param(f"enc{i}.bias", np.zeros((ch, 1, 1)))
            if i > 0:
                self._add_renorm(f"enc{i}.norm", ch)
        # decoder mirrors the encoder; skip concat then a fuse conv
        # (1x1 fuse at the full-resolution level to bound memory traffic)
        self._dec_ch = []
        for i in reversed(range(len(levels))):
            kh, kw, sh, sw, ch = levels[i]
            up_out = max(enc_in[i], cfg.dec_floor) if i == 0                 else max(enc_in[i], cfg.dec_floor)
            cur = levels[i][4] if i == len(levels) - 1 else self._dec_ch[-1]
            self._add_param(f"dec{i}.up.kernel",
                            _kaiming_uniform(rng, (cur, up_out, kh, kw), cur * kh * kw))
            self._add_param(f"dec{i}.up.bias", np.zeros((up_out, 1, 1)))
            self._add_renorm(f"dec{i}.up.norm", up_out)
            fk = 1 if i == 0 else 3
            fuse_in = up_out + enc_in[i]
            self._add_param(f"dec{i}.fuse.kernel",
                            _kaiming_uniform(rng, (up_out, fuse_in, fk, fk),
                                             fuse_in * fk * fk))
            self._add_param(f"dec{i}.fuse.bias", np.zeros((up_out, 1, 1)))
            self._add_renorm(f"dec{i}.fuse.norm", up_out)
            self._dec_ch.append(up_out)
        self._add_param("mask.kernel",
                        _kaiming_uniform(rng, (1, self._dec_ch[-1], 1, 1),
                                         self._dec_ch[-1]))
        self._add_param("mask.bias", np.zeros((1, 1, 1)))

    # grid padding so every strided level divides evenly
    def _padded_grid(self, frames: int, bins: int) -> tuple[int, int]:
        div_h = math.prod(lv[2] for lv in self.config.levels)
        div_w = math.prod(lv[3] for lv in self.config.levels)
        return -(-frames // div_h) * div_h, -(-bins // div_w) * div_w

    def mask_logits(self, lm: Tensor, train: bool) -> Tensor:
        """(B, frames, bins) log-magnitude -> (B, frames, bins) mask logits."""
        cfg = self.config
        p = self.params
        b, frames, bins = lm.data.shape
        ph, pw = self._padded_grid(frames, bins)
        h = lm.reshape(b, 1, frames, bins).pad(
            ((0, 0), (0, 0), (0, ph - frames), (0, pw - bins)))

        skips = []
        for i, (kh, kw, sh, sw, ch) in enumerate(cfg.levels):
            skips.append(h)
            h = conv2d(h, p[f"enc{i}.kernel"], (sh, sw), "same") + p[f"enc{i}.bias"]
            if i > 0:
                h = batch_renorm(h, p[f"enc{i}.norm.gamma"], p[f"enc{i}.norm.beta"],
                                 self.renorms[f"enc{i}.norm"], train)
            h = h.leaky_relu(LEAKY_SLOPE)

        for i in reversed(range(len(cfg.levels))):
            kh, kw, sh, sw, ch = cfg.levels[i]
            skip = skips[i]
            h = transposed_conv2d(h, p[f"dec{i}.up.kernel"], (sh, sw),
                                  skip.data.shape[2:], "same") + p[f"dec{i}.up.bias"]
            h = batch_renorm(h, p[f"dec{i}.up.norm.gamma"], p[f"dec{i}.up.norm.beta"],
                             self.renorms[f"dec{i}.up.norm"], train).leaky_relu(LEAKY_SLOPE)
            h = concat([h, skip], axis=1)
            h = conv2d(h, p[f"dec{i}.fuse.kernel"], (1, 1), "same") \
                + p[f"dec{i}.fuse.bias"]
            h = batch_renorm(h, p[f"dec{i}.fuse.norm.gamma"], p[f"dec{i}.fuse.norm.beta"],
                             self.renorms[f"dec{i}.fuse.norm"], train).leaky_relu(LEAKY_SLOPE)

        logits = conv2d(h, p["mask.kernel"], (1, 1), "same") + p["mask.bias"]
        return logits.slice((slice(None), 0, slice(0, frames), slice(0, bins)))

    def forward(self, x: Tensor, train: bool = False,
                logit_override: float | None = None) -> Tensor:
        """(B, T) waveform -> (B, T) speech estimate via spectrogram masking."""
        cfg = self.config
        b, t = x.data.shape
        if t != cfg.window_length:
            raise ValueError(f"expected window of {cfg.window_length} samples, got {t}")
        scfg = cfg.stft_config
        re, im = stft_pair(x, scfg)
        lm = log_mag(re, im, cfg.log_floor)
        logits = self.mask_logits(lm, train)
        if logit_override is not None:
            logits = logits + (logit_override - logits.data)  # test hook: pins values
        mask = logits.sigmoid()
        return istft_from_pair(re * mask, im * mask, scfg, t)

    def describe(self) -> str:
        cfg = self.config
        n, _, _ = frame_layout(cfg.window_length, cfg.stft_config)
        grid = (n, cfg.stft_config.num_bins)
        lines = [f"U-Net (ratio mask): {self.param_count()} parameters",
                 f"  window {cfg.window_length} -> log-magnitude grid "
                 f"{grid[0]}x{grid[1]} (padded to {self._padded_grid(*grid)})"]
        cur = 1
        for i, (kh, kw, sh, sw, ch) in enumerate(cfg.levels):
            norm = " + renorm" if i > 0 else ""
            lines.append(f"  enc{i}: conv2d {cur}->{ch} k=({kh},{kw}) "
                         f"s=({sh},{sw}){norm} + leaky_relu")
            cur = ch
        for j, i in enumerate(reversed(range(len(cfg.levels)))):
            lines.append(f"  dec{i}: t-conv2d ->{self._dec_ch[j]} + skip concat + "
                         f"3x3 fuse conv + renorm + leaky_relu")
        lines.append(f"  mask: conv2d {self._dec_ch[-1]}->1 k=1 + sigmoid")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def build_tasnet(config: TasNetConfig, seed: int = 0, dtype=np.float64) -> TasNet:
    return TasNet(config, seed, dtype)


def build_unet(config: UNetConfig, seed: int = 0, dtype=np.float64) -> UNet:
    return UNet(config, seed, dtype)


PRESETS: dict[str, dict] = {
    "tasnet-toy": dict(kind="tasnet", channels=32, kernel_size=3, num_blocks=12,
                       dilation_cycle=8, up_channels=12, outer_stride=16),
    "unet-toy": dict(kind="unet",
                     levels=((3, 3, 2, 2, 14), (3, 3, 2, 2, 28), (3, 3, 2, 2, 56))),
    "tasnet-1.5m": dict(kind="tasnet", channels=144, kernel_size=3, num_blocks=24,
                        dilation_cycle=10, outer_stride=16),
    "unet-1.5m": dict(kind="unet",
                      levels=((5, 5, 2, 2, 36), (3, 3, 2, 2, 72),
                              (3, 3, 2, 2, 144), (3, 3, 2, 2, 288))),
    "tasnet-3m": dict(kind="tasnet", channels=196, kernel_size=3, num_blocks=26,
                      dilation_cycle=10, outer_stride=16),
    "unet-3m": dict(kind="unet",
                    levels=((5, 5, 2, 2, 51), (3, 3, 2, 2, 102),
                            (3, 3, 2, 2, 204), (3, 3, 2, 2, 408))),
}


def build_preset(name: str, seed: int = 0, window_length: int = 16384,
                 dtype=np.float64):
    """Instantiate a shipped preset by name."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = dict(PRESETS[name])
    kind = spec.pop("kind")
    if kind == "tasnet":
        return build_tasnet(TasNetConfig(window_length=window_length, **spec),
                            seed, dtype)
    return build_unet(UNetConfig(window_length=window_length, **spec), seed, dtype)
