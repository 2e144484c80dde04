"""Differentiable primitives with explicit forward and backward rules.

All ops work on a single sample laid out channel-major ([C, H, W] for
images, [units] for vectors). Convolutions are 3x3, stride 1, zero
"same" padding, computed as cross-correlation through an im2col matmul.
Max pooling is 2x2 with stride 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .tensor import expect_shape

KERNEL = 3
PAD = 1


@dataclass
class ConvParams:
    weights: np.ndarray  # [out_channels, in_channels, 3, 3]
    bias: np.ndarray  # [out_channels]

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
            raise InvalidArgumentError(f"conv weights must be [out, in, 3, 3], got {w.shape}")
        expect_shape("conv bias", self.bias, (w.shape[0],))

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseParams:
    weights: np.ndarray  # [out_units, in_units]
    bias: np.ndarray  # [out_units]

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise InvalidArgumentError(f"dense weights must be 2-D, got {self.weights.shape}")
        expect_shape("dense bias", self.bias, (self.weights.shape[0],))


@dataclass
class PoolIndex:
    """Winner positions of a 2x2 max pool.

    ``flat`` holds, for every output cell, the row-major flat index of the
    winning element inside the pooled input tensor.
    """

    input_shape: tuple[int, int, int]
    flat: np.ndarray  # int64 [C, H/2, W/2]


def im2col(x: np.ndarray) -> np.ndarray:
    """[C, H, W] -> [C*9, H*W] patch matrix for a padded 3x3 same convolution."""
    c, h, w = x.shape
    padded = np.zeros((c, h + 2 * PAD, w + 2 * PAD), dtype=x.dtype)
    padded[:, PAD : PAD + h, PAD : PAD + w] = x
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(1, 2))  # [C, H, W, 3, 3]
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * KERNEL * KERNEL, h * w)


def col2im(cols: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns back onto the image."""
    c, h, w = shape
    cols = cols.reshape(c, KERNEL, KERNEL, h, w)
    padded = np.zeros((c, h + 2 * PAD, w + 2 * PAD), dtype=cols.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            padded[:, ki : ki + h, kj : kj + w] += cols[:, ki, kj]
    return padded[:, PAD : PAD + h, PAD : PAD + w]


def _check_conv_input(x: np.ndarray, params: ConvParams) -> None:
    if x.ndim != 3:
        raise InvalidArgumentError(f"conv input must be [C, H, W], got shape {x.shape}")
    if x.shape[0] != params.in_channels:
        raise InvalidArgumentError(
            f"conv input has {x.shape[0]} channels but weights expect {params.in_channels}"
        )


def conv2d_forward(x: np.ndarray, params: ConvParams, cols: np.ndarray | None = None) -> np.ndarray:
    _check_conv_input(x, params)
    c, h, w = x.shape
    if cols is None:
        cols = im2col(x)
    w2 = params.weights.reshape(params.out_channels, -1)
    out = w2 @ cols
    out += params.bias[:, None]
    return out.reshape(params.out_channels, h, w)


def conv2d_backward(
    x: np.ndarray,
    params: ConvParams,
    upstream: np.ndarray,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, ConvParams]:
    """Gradients of ``sum(upstream * conv2d_forward(x, params))``.

    Returns ``(d_input, ConvParams(d_weights, d_bias))``. ``cols`` may carry
    the im2col matrix already computed during the forward pass.
    """
    _check_conv_input(x, params)
    c, h, w = x.shape
    expect_shape("conv upstream", upstream, (params.out_channels, h, w))
    if cols is None:
        cols = im2col(x)
    up2 = upstream.reshape(params.out_channels, h * w)
    w2 = params.weights.reshape(params.out_channels, -1)
    d_weights = (up2 @ cols.T).reshape(params.weights.shape)
    d_bias = up2.sum(axis=1)
    d_input = col2im(w2.T @ up2, (c, h, w))
    return d_input, ConvParams(d_weights, d_bias)


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, PoolIndex]:
    if x.ndim != 3:
        raise InvalidArgumentError(f"pool input must be [C, H, W], got shape {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidArgumentError(f"2x2 pooling needs even spatial dims, got H={h}, W={w}")
    h2, w2 = h // 2, w // 2
    # window elements in row-major order: (0,0) (0,1) (1,0) (1,1)
    windows = x.reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    local = windows.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    ci, ii, jj = np.indices((c, h2, w2))
    rows = 2 * ii + local // 2
    cols = 2 * jj + local % 2
    flat = (ci * h + rows) * w + cols
    return out, PoolIndex((c, h, w), flat.astype(np.int64))


def maxpool2_backward(index: PoolIndex, upstream: np.ndarray) -> np.ndarray:
    if upstream.shape != index.flat.shape:
        raise InvalidArgumentError(
            f"pool upstream shape {upstream.shape} does not match forward output {index.flat.shape}"
        )
    d_input = np.zeros(int(np.prod(index.input_shape)), dtype=upstream.dtype)
    # 2x2 stride-2 windows are disjoint, so winners never collide
    d_input[index.flat.ravel()] = upstream.ravel()
    return d_input.reshape(index.input_shape)


def _check_dense_input(x: np.ndarray, params: DenseParams) -> None:
    if x.ndim != 1 or x.shape[0] != params.weights.shape[1]:
        raise InvalidArgumentError(
            f"dense input shape {x.shape} does not match weights in_units={params.weights.shape[1]}"
        )


def dense_forward(x: np.ndarray, params: DenseParams) -> np.ndarray:
    _check_dense_input(x, params)
    return params.weights @ x + params.bias


def dense_backward(
    x: np.ndarray, params: DenseParams, upstream: np.ndarray
) -> tuple[np.ndarray, DenseParams]:
    _check_dense_input(x, params)
    expect_shape("dense upstream", upstream, (params.weights.shape[0],))
    d_input = params.weights.T @ upstream
    return d_input, DenseParams(np.outer(upstream, x), upstream.copy())


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # np.maximum propagates NaN so divergence reaches the loss check
    return np.maximum(x, 0).astype(x.dtype, copy=False), x > 0


def relu_backward(mask: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if mask.shape != upstream.shape:
        raise InvalidArgumentError(f"relu upstream shape {upstream.shape} != mask shape {mask.shape}")
    # gradient at exactly 0 is 0
    return np.where(mask, upstream, 0).astype(upstream.dtype, copy=False)
