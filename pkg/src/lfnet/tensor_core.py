"""Dense NCHW kernels: convolution, batch normalization, ReLU, channel concat.

Tensors are plain 4-D ``numpy.ndarray`` objects in (N, C, H, W) order. Every
kernel computes in the dtype of its inputs, so single precision is used for
training and double precision for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BackwardError, ShapeError

PRECISIONS = {"single": np.float32, "double": np.float64}

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1  # weight given to the new batch statistic


def dtype_of(precision):
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}") from None


def _check4d(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}",
                         expected=4, actual=x.ndim)


@dataclass
class ConvParams:
    weight: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def kernel_size(self):
        return self.weight.shape[2]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    @property
    def channels(self):
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels, dtype=np.float32):
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


# ---------------------------------------------------------------------------
# convolution
#
# Same-padded cross-correlation evaluated as k*k GEMMs over a flattened,
# zero-padded NHWC buffer. For a kernel tap (i, j) the shifted input is a
# contiguous slice of that buffer starting at i*Wp + j, so no im2col copy is
# needed. Rows of the output grid that fall on padding are garbage and are
# dropped after the accumulation.


def _padded_flat(x, pad):
    n, c, h, w = x.shape
    buf = np.zeros((n, h + 2 * pad, w + 2 * pad, c), x.dtype)
    buf[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return buf.reshape(-1, c)


def _check_conv(x, params):
    _check4d(x, "input")
    k = params.weight.shape[2]
    if params.weight.ndim != 4 or params.weight.shape[3] != k or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {params.weight.shape[2:]}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"conv expects {params.in_channels} input channels, got {x.shape[1]}",
            expected=params.in_channels, actual=x.shape[1],
        )
    if params.bias.shape != (params.out_channels,):
        raise ShapeError(f"bias shape {params.bias.shape} does not match {params.out_channels} filters")
    return k


def conv2d_forward(x, params):
    k = _check_conv(x, params)
    n, _, h, w = x.shape
    pad = (k - 1) // 2
    hp, wp = h + 2 * pad, w + 2 * pad
    flat = _padded_flat(x, pad)
    span = flat.shape[0] - (k - 1) * (wp + 1)
    taps = np.ascontiguousarray(params.weight.transpose(2, 3, 1, 0))  # k, k, C, O
    out = np.zeros((flat.shape[0], params.out_channels), np.result_type(x, params.weight))
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            out[:span] += flat[off:off + span] @ taps[i, j]
    out = out.reshape(n, hp, wp, -1)[:, :h, :w, :]
    out += params.bias
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, params, grad_output):
    """Return ``(grad_input, grad_weight, grad_bias)``."""
    k = _check_conv(x, params)
    n, c, h, w = x.shape
    expected = (n, params.out_channels, h, w)
    if grad_output.shape != expected:
        raise ShapeError(f"grad_output shape {grad_output.shape} != forward output {expected}",
                         expected=expected, actual=grad_output.shape)
    pad = (k - 1) // 2
    hp, wp = h + 2 * pad, w + 2 * pad
    flat = _padded_flat(x, pad)
    span = flat.shape[0] - (k - 1) * (wp + 1)

    gout = np.zeros((n, hp, wp, params.out_channels), grad_output.dtype)
    gout[:, :h, :w, :] = grad_output.transpose(0, 2, 3, 1)
    gout = gout.reshape(-1, params.out_channels)[:span]

    taps = np.ascontiguousarray(params.weight.transpose(2, 3, 0, 1))  # k, k, O, C
    gflat = np.zeros_like(flat)
    gw = np.empty((k, k, c, params.out_channels), flat.dtype)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            gflat[off:off + span] += gout @ taps[i, j]
            gw[i, j] = flat[off:off + span].T @ gout
    grad_input = gflat.reshape(n, hp, wp, c)[:, pad:pad + h, pad:pad + w, :]
    grad_input = np.ascontiguousarray(grad_input.transpose(0, 3, 1, 2))
    grad_weight = np.ascontiguousarray(gw.transpose(3, 2, 0, 1))
    grad_bias = grad_output.sum(axis=(0, 2, 3))
    return grad_input, grad_weight, grad_bias


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormCache:
    mode: str
    x_hat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    gamma: np.ndarray | None = None
    running_mean: np.ndarray | None = None  # updated statistics (train mode)
    running_var: np.ndarray | None = None


def batchnorm_forward(x, params, mode="train"):
    """Normalize per channel; returns ``(output, cache)``.

    In train mode the cache also carries the updated running statistics; the
    caller decides whether to write them back into ``params``.
    """
    _check4d(x, "input")
    if x.shape[1] != params.channels:
        raise ShapeError(f"batch norm has {params.channels} channels, input has {x.shape[1]}",
                         expected=params.channels, actual=x.shape[1])
    bshape = (1, -1, 1, 1)
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(params.running_var + params.epsilon)
        x_hat = (x - params.running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        out = params.gamma.reshape(bshape) * x_hat + params.beta.reshape(bshape)
        return out.astype(x.dtype, copy=False), BatchNormCache(mode="infer")
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise ShapeError("train-mode batch norm needs at least 2 values per channel",
                         expected=2, actual=count)
    mean = x.mean(axis=(0, 2, 3))
    centered = x - mean.reshape(bshape)
    var = np.mean(centered * centered, axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    x_hat = centered * inv_std.reshape(bshape)
    out = params.gamma.reshape(bshape) * x_hat + params.beta.reshape(bshape)

    mom = params.momentum
    cache = BatchNormCache(
        mode="train",
        x_hat=x_hat,
        inv_std=inv_std,
        gamma=params.gamma,
        running_mean=((1 - mom) * params.running_mean + mom * mean).astype(params.running_mean.dtype),
        running_var=((1 - mom) * params.running_var + mom * var).astype(params.running_var.dtype),
    )
    return out, cache


def batchnorm_backward(cache, grad_output):
    """Return ``(grad_input, grad_gamma, grad_beta)`` through the batch statistics."""
    if cache.mode != "train":
        raise BackwardError("batch norm backward is only defined for train-mode statistics")
    if grad_output.shape != cache.x_hat.shape:
        raise ShapeError(f"grad_output shape {grad_output.shape} != {cache.x_hat.shape}",
                         expected=cache.x_hat.shape, actual=grad_output.shape)
    bshape = (1, -1, 1, 1)
    axes = (0, 2, 3)
    grad_beta = grad_output.sum(axis=axes)
    grad_gamma = (grad_output * cache.x_hat).sum(axis=axes)
    count = grad_output.size // grad_output.shape[1]
    scale = (cache.gamma * cache.inv_std / count).reshape(bshape)
    grad_input = scale * (
        count * grad_output
        - grad_beta.reshape(bshape)
        - cache.x_hat * grad_gamma.reshape(bshape)
    )
    return grad_input, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pointwise and structural


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x, grad_output):
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_output, 0).astype(grad_output.dtype, copy=False)


def concat_channels(a, b):
    _check4d(a, "a")
    _check4d(b, "b")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"cannot concatenate {a.shape} with {b.shape}: batch/spatial dims differ",
                         expected=a.shape, actual=b.shape)
    return np.concatenate([a, b], axis=1)


def split_channels_backward(grad_output, split_point):
    return grad_output[:, :split_point], grad_output[:, split_point:]
