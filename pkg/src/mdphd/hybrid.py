"""Cascade of the time-domain and T-F-domain networks.

Both cascade orders share the same two parameter sets; training alternates
the order per optimizer step so each network also sees raw (un-denoised)
input, and inference averages the two path outputs. The mid-point hand-off
is always a waveform.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import Tensor
from .models import TasNet, UNet
from .objectives import hybrid_loss

__all__ = ["PathOrder", "HybridModel", "training_order"]


class PathOrder(Enum):
    U_THEN_D = "u2d"
    D_THEN_U = "d2u"


def training_order(step: int) -> PathOrder:
    """Alternation schedule: even steps run U->D, odd steps D->U."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return PathOrder.U_THEN_D if step % 2 == 0 else PathOrder.D_THEN_U


class HybridModel:
    """Two shared-parameter domain networks plus path-order state.

    mode: "alternating" (dual path, order switched per step), "u2d" or
    "d2u" (fixed single path). both_paths_per_step evaluates the full
    four-term objective every step instead of the active path only.
    """

    MODES = ("alternating", "u2d", "d2u")

    def __init__(self, tasnet: TasNet, unet: UNet, mode: str = "alternating",
                 both_paths_per_step: bool = False):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        if tasnet.config.window_length != unet.config.window_length:
            raise ValueError("sub-models disagree on window length")
        self.tasnet = tasnet
        self.unet = unet
        self.mode = mode
        self.both_paths_per_step = both_paths_per_step
        self.step_counter = 0

    @property
    def window_length(self) -> int:
        return self.tasnet.config.window_length

    # -- parameters -------------------------------------------------------

    def named_params(self) -> dict:
        out = {f"tasnet.{k}": p for k, p in self.tasnet.params.items()}
        out.update({f"unet.{k}": p for k, p in self.unet.params.items()})
        return out

    def param_count(self) -> int:
        return self.tasnet.param_count() + self.unet.param_count()

    def zero_grad(self) -> None:
        self.tasnet.zero_grad()
        self.unet.zero_grad()

    def describe(self) -> str:
        return (f"Hybrid model, mode={self.mode}, "
                f"{self.param_count()} parameters total\n"
                + self.tasnet.describe() + "\n" + self.unet.describe())

    # -- forward ----------------------------------------------------------

    def forward_path(self, x: Tensor, order: PathOrder,
                     train: bool = False) -> tuple[Tensor, Tensor]:
        """Run one cascade order; returns (mid estimate, final estimate)."""
        if order is PathOrder.U_THEN_D:
            mid = self.unet.forward(x, train)
            final = self.tasnet.forward(mid, train)
        else:
            mid = self.tasnet.forward(x, train)
            final = self.unet.forward(mid, train)
        return mid, final

    def train_step_loss(self, x, s, n, kind: str = "l1") -> Tensor:
        """Objective for the current step (does not advance the counter)."""
        xt = Tensor(x)
        if self.mode == "alternating" and not self.both_paths_per_step:
            orders = [training_order(self.step_counter)]
        elif self.mode == "alternating":
            orders = [PathOrder.U_THEN_D, PathOrder.D_THEN_U]
        else:
            orders = [PathOrder(self.mode)]
        mids, finals = [], []
        for order in orders:
            mid, final = self.forward_path(xt, order, train=True)
            mids.append(mid)
            finals.append(final)
        return hybrid_loss(x, s, n, mids, finals, kind)

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode enhancement: average of both path outputs.

        Single-path modes return their fixed path's output instead.
        """
        squeeze = x.ndim == 1
        xb = x.reshape(1, -1) if squeeze else x
        xt = Tensor(np.ascontiguousarray(xb, dtype=self.tasnet.dtype))
        if self.mode == "alternating":
            _, out_u = self.forward_path(xt, PathOrder.U_THEN_D, train=False)
            _, out_d = self.forward_path(xt, PathOrder.D_THEN_U, train=False)
            out = 0.5 * (out_u.data + out_d.data)
        else:
            _, final = self.forward_path(xt, PathOrder(self.mode), train=False)
            out = final.data
        return out[0] if squeeze else out
