"""Batch renormalization over the channel axis.

Normalizes with batch statistics but pulls them toward running statistics
through clipped correction factors r and d, which are treated as constants
in the backward pass. Keeps small batches stable. The clip bounds ramp up
from plain batch-norm behavior (r_max=1, d_max=0) over the first
`ramp_steps` updates.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["RenormState", "batch_renorm"]

_EPS = 1e-5


class RenormState:
    """Running statistics and ramp schedule for one renorm layer."""

    def __init__(self, channels: int, momentum: float = 0.99,
                 r_max: float = 3.0, d_max: float = 5.0, ramp_steps: int = 5000):
        self.channels = channels
        self.momentum = momentum
        self.r_max_final = r_max
        self.d_max_final = d_max
        self.ramp_steps = ramp_steps
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.num_updates = 0

    def current_limits(self) -> tuple[float, float]:
        frac = min(1.0, self.num_updates / self.ramp_steps) if self.ramp_steps > 0 else 1.0
        return 1.0 + (self.r_max_final - 1.0) * frac, self.d_max_final * frac

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "running_mean": self.running_mean,
            "running_var": self.running_var,
            "num_updates": np.array([float(self.num_updates)]),
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.running_mean = arrays["running_mean"].copy()
        self.running_var = arrays["running_var"].copy()
        self.num_updates = int(arrays["num_updates"][0])


def batch_renorm(x: Tensor, gamma: Tensor, beta: Tensor, state: RenormState,
                 train: bool) -> Tensor:
    """Normalize (B, C, ...) input per channel; see module docstring."""
    axes = (0,) + tuple(range(2, x.data.ndim))
    cshape = (1, state.channels) + (1,) * (x.data.ndim - 2)

    dt = x.data.dtype
    if train:
        mu_b = x.data.mean(axis=axes, dtype=np.float64)
        var_b = x.data.var(axis=axes, dtype=np.float64)
        sigma_b = np.sqrt(var_b + _EPS)
        sigma_run = np.sqrt(state.running_var + _EPS)
        r_max, d_max = state.current_limits()
        r = np.clip(sigma_b / sigma_run, 1.0 / r_max, r_max)
        d = np.clip((mu_b - state.running_mean) / sigma_run, -d_max, d_max)

        xhat = (x.data - mu_b.reshape(cshape).astype(dt)) \
            / sigma_b.reshape(cshape).astype(dt)
        pre = xhat * r.reshape(cshape).astype(dt) + d.reshape(cshape).astype(dt)
        out = gamma.data.reshape(cshape) * pre + beta.data.reshape(cshape)

        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu_b
        state.running_var = m * state.running_var + (1.0 - m) * var_b
        state.num_updates += 1

        n = x.data.size // state.channels

        def bwd(g):
            if gamma.requires_grad:
                gamma._accumulate((g * pre).sum(axis=axes))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))
            if x.requires_grad:
                # r, d constant; mu_b, sigma_b differentiated
                gy = g * (gamma.data * r).reshape(cshape).astype(dt)
                mean_gy = (gy.sum(axis=axes) / n).astype(dt)
                mean_gy_xhat = ((gy * xhat).sum(axis=axes) / n).astype(dt)
                gx = (gy - mean_gy.reshape(cshape)
                      - xhat * mean_gy_xhat.reshape(cshape)) \
                    / sigma_b.reshape(cshape).astype(dt)
                x._accumulate(gx)

        return Tensor._result(out, (x, gamma, beta), bwd)

    # eval mode: running statistics only (zero updates -> mean 0, var 1)
    sigma_run = np.sqrt(state.running_var + _EPS)
    xhat = (x.data - state.running_mean.reshape(cshape).astype(dt)) \
        / sigma_run.reshape(cshape).astype(dt)
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def bwd_eval(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axes))
        if x.requires_grad:
            x._accumulate(g * (gamma.data / sigma_run).reshape(cshape).astype(dt))

    return Tensor._result(out, (x, gamma, beta), bwd_eval)
