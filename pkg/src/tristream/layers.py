"""Differentiable layer primitives: convolutions, transposed convolutions,
fully connected layers, and activations.

Two call surfaces exist. ``forward`` is the single-sample, channels-last
contract surface (images ``(H, W, C)``, signals ``(L, C)``); the batched
channels-first helpers (``forward_batch`` / ``backward_batch``) are what
the network assembly uses, and both run on the kernel backend selected in
:mod:`tristream.kernels`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import NumericError, ShapeError

KINDS = ("conv2d", "conv1d", "tconv2d", "tconv1d", "fc")
ACTIVATIONS = ("relu", "sigmoid", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    output_padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.kernel < 1:
            raise ShapeError("kernel must be >= 1")
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        if self.padding < 0:
            raise ShapeError("padding must be >= 0")
        if not 0 <= self.output_padding < max(self.stride, 1):
            raise ShapeError("output_padding must lie in [0, stride)")

    def weight_shape(self):
        k = self.kernel
        if self.kind == "conv2d":
            return (self.out_channels, self.in_channels, k, k)
        if self.kind == "conv1d":
            return (self.out_channels, self.in_channels, k)
        if self.kind == "tconv2d":
            return (self.in_channels, self.out_channels, k, k)
        if self.kind == "tconv1d":
            return (self.in_channels, self.out_channels, k)
        return (self.out_channels, self.in_channels)

    def bias_shape(self):
        return (self.out_channels,)


def conv_out_len(n: int, kernel: int, stride: int, pad: int) -> int:
    """Spatial output extent of a strided convolution."""
    if n < 1:
        raise ShapeError(f"input extent must be >= 1, got {n}")
    if kernel < 1 or stride < 1 or pad < 0:
        raise ShapeError("invalid kernel/stride/padding")
    out = (n + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"degenerate output: extent {n} with kernel {kernel}, stride {stride}, "
            f"padding {pad} yields {out}"
        )
    return out


def tconv_out_len(n: int, kernel: int, stride: int, pad: int, output_padding: int = 0) -> int:
    """Spatial output extent of a transposed convolution."""
    if n < 1:
        raise ShapeError(f"input extent must be >= 1, got {n}")
    out = (n - 1) * stride - 2 * pad + kernel + output_padding
    if out < 1:
        raise ShapeError(f"degenerate output: transposed extent {out}")
    return out


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return expit(x)


def apply_activation(name, z):
    if name == "relu":
        return relu(z)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def activation_grad(name, out, grad_out):
    # backward through the activation given its *output* and upstream grad
    if name == "relu":
        return grad_out * (out > 0)
    if name == "sigmoid":
        return grad_out * out * (1.0 - out)
    return grad_out


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")


def _check_weights(layer: LayerSpec, weights, bias):
    if weights.shape != layer.weight_shape():
        raise ShapeError(
            f"{layer.kind} weights: expected {layer.weight_shape()}, got {weights.shape}"
        )
    if bias.shape != layer.bias_shape():
        raise ShapeError(f"{layer.kind} bias: expected {layer.bias_shape()}, got {bias.shape}")


def forward_batch(layer: LayerSpec, weights, bias, x):
    """Batched channels-first forward pass (no validation; hot path).

    conv/tconv ``x`` is ``(N, C, ...)``; fc ``x`` is ``(N, in)``. Returns the
    post-activation output.
    """
    be = kernels.active()
    if layer.kind == "fc":
        z = x @ weights.T + bias
    elif layer.kind == "conv1d":
        z = be.conv1d_forward(x, weights, layer.stride, layer.padding)
        z += bias[None, :, None]
    elif layer.kind == "conv2d":
        z = be.conv2d_forward(x, weights, layer.stride, layer.padding)
        z += bias[None, :, None, None]
    elif layer.kind == "tconv1d":
        out_len = tconv_out_len(x.shape[2], layer.kernel, layer.stride, layer.padding,
                                layer.output_padding)
        z = be.tconv1d_forward(x, weights, layer.stride, layer.padding, out_len)
        z += bias[None, :, None]
    else:  # tconv2d
        oh = tconv_out_len(x.shape[2], layer.kernel, layer.stride, layer.padding,
                           layer.output_padding)
        ow = tconv_out_len(x.shape[3], layer.kernel, layer.stride, layer.padding,
                           layer.output_padding)
        z = be.tconv2d_forward(x, weights, layer.stride, layer.padding, (oh, ow))
        z += bias[None, :, None, None]
    return apply_activation(layer.activation, z)


def backward_batch(layer: LayerSpec, weights, x, out, grad_out):
    """Batched backward pass; returns ``(grad_x, grad_w, grad_b)``.

    ``x`` is the layer input and ``out`` the post-activation output saved
    from the forward pass.
    """
    be = kernels.active()
    gz = activation_grad(layer.activation, out, grad_out)
    if layer.kind == "fc":
        gx = gz @ weights
        gw = gz.T @ x
        gb = gz.sum(axis=0)
    elif layer.kind == "conv1d":
        gx = be.conv1d_input_grad(gz, weights, layer.stride, layer.padding, x.shape[2])
        gw = be.conv1d_weight_grad(x, gz, layer.stride, layer.padding, layer.kernel)
        gb = gz.sum(axis=(0, 2))
    elif layer.kind == "conv2d":
        gx = be.conv2d_input_grad(gz, weights, layer.stride, layer.padding, x.shape[2:4])
        gw = be.conv2d_weight_grad(x, gz, layer.stride, layer.padding, layer.kernel)
        gb = gz.sum(axis=(0, 2, 3))
    elif layer.kind == "tconv1d":
        gx = be.tconv1d_input_grad(gz, weights, layer.stride, layer.padding, x.shape[2])
        gw = be.tconv1d_weight_grad(x, gz, layer.stride, layer.padding, layer.kernel)
        gb = gz.sum(axis=(0, 2))
    else:
        gx = be.tconv2d_input_grad(gz, weights, layer.stride, layer.padding, x.shape[2:4])
        gw = be.tconv2d_weight_grad(x, gz, layer.stride, layer.padding, layer.kernel)
        gb = gz.sum(axis=(0, 2, 3))
    return gx, gw, gb


def forward(layer: LayerSpec, weights, bias, x):
    """Single-sample forward pass with full validation.

    Layouts: conv2d/tconv2d take ``(H, W, C_in)``, conv1d/tconv1d take
    ``(L, C_in)``, fc takes a flat ``(in,)`` vector.
    """
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    x = np.asarray(x)
    _check_weights(layer, weights, bias)
    _require_finite("input", x)
    _require_finite("weights", weights)
    _require_finite("bias", bias)

    if layer.kind == "fc":
        if x.ndim != 1:
            raise ShapeError(f"fc input must be a vector, got ndim {x.ndim}")
        if x.shape[0] != layer.in_channels:
            raise ShapeError(
                f"fc input axis 0: expected {layer.in_channels}, got {x.shape[0]}"
            )
        return apply_activation(layer.activation, weights @ x + bias)

    if layer.kind in ("conv1d", "tconv1d"):
        if x.ndim != 2:
            raise ShapeError(f"{layer.kind} input must be (L, C), got ndim {x.ndim}")
        if x.shape[1] != layer.in_channels:
            raise ShapeError(
                f"{layer.kind} input axis 1 (channels): expected "
                f"{layer.in_channels}, got {x.shape[1]}"
            )
        if layer.kind == "conv1d":
            conv_out_len(x.shape[0], layer.kernel, layer.stride, layer.padding)
        xcf = np.ascontiguousarray(x.T)[None]
        y = forward_batch(layer, weights, bias, xcf)
        return np.ascontiguousarray(y[0].T)

    if x.ndim != 3:
        raise ShapeError(f"{layer.kind} input must be (H, W, C), got ndim {x.ndim}")
    if x.shape[2] != layer.in_channels:
        raise ShapeError(
            f"{layer.kind} input axis 2 (channels): expected "
            f"{layer.in_channels}, got {x.shape[2]}"
        )
    if layer.kind == "conv2d":
        conv_out_len(x.shape[0], layer.kernel, layer.stride, layer.padding)
        conv_out_len(x.shape[1], layer.kernel, layer.stride, layer.padding)
    xcf = np.ascontiguousarray(x.transpose(2, 0, 1))[None]
    y = forward_batch(layer, weights, bias, xcf)
    return np.ascontiguousarray(y[0].transpose(1, 2, 0))


def gradient_check(f, x, eps: float = 1e-5) -> float:
    """Compare f's analytic gradient against central differences.

    ``f(x)`` must return ``(value, grad)`` with ``grad`` shaped like ``x``.
    Returns the max over coordinates of
    ``|analytic - fd| / max(|analytic|, |fd|, 1e-8)``. Run in float64.
    """
    x = np.asarray(x, dtype=np.float64)
    value, grad = f(x)
    if not np.isfinite(value):
        raise NumericError("function value is not finite")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ShapeError(f"gradient shape {grad.shape} != input shape {x.shape}")
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp, _ = f(x)
        flat[i] = orig - eps
        fm, _ = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("function value is not finite under perturbation")
        fd = (fp - fm) / (2.0 * eps)
        g = grad.reshape(-1)[i]
        err = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    """Fan-in-scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
