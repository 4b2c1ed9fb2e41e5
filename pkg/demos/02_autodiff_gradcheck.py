"""Reverse-mode autodiff in a few lines.

Builds a tiny computation with the tape engine, backpropagates, and
verifies one gradient against central finite differences.
"""
import numpy as np

from mdphd.autodiff import Tensor, backward, check_gradients, conv1d, l1_norm

rng = np.random.default_rng(0)

# forward: y = sum |leaky_relu(conv(x, w))|
x = Tensor(rng.standard_normal((1, 2, 32)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2, 3)) * 0.5, requires_grad=True)
y = l1_norm(conv1d(x, w, stride=2, dilation=2).leaky_relu(0.2))
backward(y)
print(f"loss = {float(y.data):.4f}")
print(f"grad shapes: x {x.grad.shape}, w {w.grad.shape}")

# check against finite differences
err = check_gradients(
    lambda a: l1_norm(conv1d(a[0], a[1], stride=2, dilation=2)
                      .leaky_relu(0.2)),
    [x.data.copy(), w.data.copy()])
print(f"worst relative error vs finite differences: {err:.3e}")
assert err < 1e-6
