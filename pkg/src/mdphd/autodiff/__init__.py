"""Minimal reverse-mode autodiff engine used by the denoising networks."""
from .tensor import Tensor, Parameter, backward, concat
from .conv import conv1d, transposed_conv1d, conv2d, transposed_conv2d
from .norm import RenormState, batch_renorm
from .fourier import stft_pair, istft_from_pair, log_mag
from .gradcheck import finite_difference_grad, check_gradients

__all__ = [
    "Tensor", "Parameter", "backward", "concat",
    "conv1d", "transposed_conv1d", "conv2d", "transposed_conv2d",
    "RenormState", "batch_renorm",
    "stft_pair", "istft_from_pair", "log_mag",
    "finite_difference_grad", "check_gradients",
    "l1_norm",
]


def l1_norm(x: Tensor) -> Tensor:
    """Sum of absolute values as a scalar tensor; subgradient at 0 is 0."""
    return x.abs().sum()
