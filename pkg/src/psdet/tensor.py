"""Minimal dense 4-D tensor ops: 2-D convolution and rectifier, forward and backward.

Tensors are plain numpy ``float64`` arrays laid out row-major in
(n, c, h, w) order; every op validates shapes and returns freshly allocated
outputs, so results can be shared across threads safely. Convolution is the
standard cross-correlation, evaluated through an im2col/GEMM path; the
backward pass returns exact analytic gradients (no autodiff tape).
"""

from dataclasses import dataclass

import numpy as np

from .validation import as_feature_map, check_same_shape

__all__ = ["ConvLayer", "conv2d_forward", "conv2d_backward", "conv_output_hw",
           "relu_forward", "relu_backward"]


@dataclass
class ConvLayer:
    """2-D convolution parameters: weights (out_c, in_c, kh, kw), bias (out_c,)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError(f"weights must be 4-D (out_c, in_c, kh, kw), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match out_c={self.weights.shape[0]}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride={self.stride} / padding={self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def conv_output_hw(in_h: int, in_w: int, layer: ConvLayer) -> tuple[int, int]:
    """Spatial output size: floor((in + 2*padding - kernel)/stride) + 1, per axis."""
    kh, kw = layer.weights.shape[2:]
    oh = (in_h + 2 * layer.padding - kh) // layer.stride + 1
    ow = (in_w + 2 * layer.padding - kw) // layer.stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"kernel {kh}x{kw} with padding {layer.padding} does not fit input {in_h}x{in_w}")
    return oh, ow


def _im2col(x_padded: np.ndarray, kh: int, kw: int, stride: int,
            oh: int, ow: int) -> np.ndarray:
    """(n, c, H, W) -> (n*oh*ow, c*kh*kw) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]          # (n, c, oh, ow, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(-1, x_padded.shape[1] * kh * kw)
    return np.ascontiguousarray(cols)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, layer: ConvLayer) -> np.ndarray:
    """Cross-correlate ``x`` (n, in_c, h, w) with the layer's kernel, add bias."""
    x = as_feature_map(x, "conv input")
    if x.shape[1] != layer.in_channels:
        raise ValueError(
            f"conv input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    n = x.shape[0]
    kh, kw = layer.weights.shape[2:]
    oh, ow = conv_output_hw(x.shape[2], x.shape[3], layer)
    cols = _im2col(_pad(x, layer.padding), kh, kw, layer.stride, oh, ow)
    w2d = layer.weights.reshape(layer.out_channels, -1)
    out = cols @ w2d.T + layer.bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, layer.out_channels).transpose(0, 3, 1, 2))


def conv2d_backward(x, layer: ConvLayer, grad_out) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through ``conv2d_forward``.

    Returns (grad_input, grad_weights, grad_bias) with the same shapes as
    (x, layer.weights, layer.bias). ``grad_out`` must match the forward
    output shape exactly.
    """
    x = as_feature_map(x, "conv input")
    grad_out = as_feature_map(grad_out, "grad_out")
    if x.shape[1] != layer.in_channels:
        raise ValueError(
            f"conv input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    n = x.shape[0]
    kh, kw = layer.weights.shape[2:]
    oh, ow = conv_output_hw(x.shape[2], x.shape[3], layer)
    check_same_shape(grad_out, (n, layer.out_channels, oh, ow), "grad_out")

    x_padded = _pad(x, layer.padding)
    cols = _im2col(x_padded, kh, kw, layer.stride, oh, ow)
    g2d = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1).reshape(-1, layer.out_channels))

    grad_weights = (g2d.T @ cols).reshape(layer.weights.shape)
    grad_bias = g2d.sum(axis=0)

    # col2im: scatter patch gradients back, one kernel offset at a time
    w2d = layer.weights.reshape(layer.out_channels, -1)
    dcols = (g2d @ w2d).reshape(n, oh, ow, layer.in_channels, kh, kw)
    grad_padded = np.zeros_like(x_padded)
    s = layer.stride
    for dy in range(kh):
        for dx in range(kw):
            grad_padded[:, :, dy:dy + oh * s:s, dx:dx + ow * s:s] += \
                dcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
    p = layer.padding
    grad_input = grad_padded if p == 0 else grad_padded[:, :, p:-p, p:-p]
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    """Gradient through the rectifier; the subgradient at 0 is taken as 0."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    check_same_shape(grad_out, x.shape, "relu grad_out")
    return np.where(x > 0.0, grad_out, 0.0)
