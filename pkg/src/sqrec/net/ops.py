"""Functional forward/backward primitives on NCHW arrays.

Every forward returns ``(output, cache)`` and the matching backward consumes
the cache, so layers stay thin wrappers and gradients can be checked op by
op.  Convolutions lower to matrix multiplies via strided window views;
spatial padding follows the "same" rule ``out = ceil(in / stride)`` with any
odd padding going to the bottom/right edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def same_padding(size: int, kernel: int, stride: int):
    """(out_size, pad_before, pad_after) for one spatial axis."""
    if size < 1 or kernel < 1 or stride < 1:
        raise ValueError(f"invalid conv geometry size={size} kernel={kernel} stride={stride}")
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


@dataclass
class ConvCache:
    cols: np.ndarray
    kernel: np.ndarray
    x_shape: tuple
    padded_hw: tuple
    pads: tuple
    stride: int


def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1):
    """2-d convolution (cross-correlation), x (B,C,H,W), kernel (O,C,kh,kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"expected 4-d input and kernel, got {x.ndim}-d and {kernel.ndim}-d")
    b, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input channels, input has {c}")
    if bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
    ho, pt, pb = same_padding(h, kh, stride)
    wo, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt + pb + pl + pr) else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (B,C,Ho,Wo,kh,kw) -> (B,Ho,Wo,C*kh*kw), one contiguous copy
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * kh * kw)
    y = cols @ kernel.reshape(o, -1).T + bias
    cache = ConvCache(cols, kernel, x.shape, xp.shape[2:], (pt, pl), stride)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), cache


def conv_backward(dy: np.ndarray, cache: ConvCache):
    """Gradients (dx, dkernel, dbias) for conv_forward."""
    if cache is None:
        raise ValueError("conv_backward needs the forward cache")
    o, c, kh, kw = cache.kernel.shape
    b, _, ho, wo = dy.shape
    s = cache.stride
    dyt = dy.transpose(0, 2, 3, 1)
    dbias = dy.sum(axis=(0, 2, 3))
    dkernel = np.tensordot(dyt, cache.cols, axes=([0, 1, 2], [0, 1, 2])).reshape(o, c, kh, kw)
    dcols = (dyt @ cache.kernel.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
    hp, wp = cache.padded_hw
    dxp = np.zeros((b, c, hp, wp), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    pt, pl = cache.pads
    h, w = cache.x_shape[2:]
    return dxp[:, :, pt : pt + h, pl : pl + w], dkernel, dbias


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def batchnorm_forward(x, gain, shift, running_mean, running_var, *, train: bool,
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel normalization over (batch, spatial) axes.

    Batch statistics use the biased variance estimator, and the running
    average accumulates the same biased values, so evaluating with running
    statistics reproduces training-mode outputs once the averages have
    converged.  Returns (y, running_mean, running_var, cache); the running
    arrays are fresh copies in training mode and passed through untouched
    in evaluation mode.
    """
    if x.ndim != 4:
        raise ValueError(f"expected 4-d input, got {x.ndim}-d")
    axes = (0, 2, 3)
    shape = (1, x.shape[1], 1, 1)
    if train:
        if x.shape[0] < 2:
            raise ValueError("training-mode normalization needs batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean = (1.0 - momentum) * running_mean + momentum * mean
        running_var = (1.0 - momentum) * running_var + momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gain.reshape(shape) * xhat + shift.reshape(shape)
    return y, running_mean, running_var, BatchNormCache(xhat, inv_std, gain)


def batchnorm_backward(dy, cache: BatchNormCache):
    """Gradients (dx, dgain, dshift) through training-mode batch statistics."""
    if cache is None:
        raise ValueError("batchnorm_backward needs the forward cache")
    axes = (0, 2, 3)
    shape = (1, dy.shape[1], 1, 1)
    n = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgain = (dy * cache.xhat).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    dxhat = dy * cache.gain.reshape(shape)
    dx = (cache.inv_std.reshape(shape) / n) * (
        n * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - cache.xhat * (dxhat * cache.xhat).sum(axis=axes).reshape(shape))
    return dx, dgain, dshift


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    if mask is None:
        raise ValueError("relu_backward needs the forward cache")
    return dy * mask


def dense_forward(x, weights, bias):
    """Affine map, x (B,K) @ weights (K,M) + bias (M,)."""
    if x.ndim != 2:
        raise ValueError(f"expected 2-d input, got {x.ndim}-d")
    if x.shape[1] != weights.shape[0]:
        raise ValueError(f"input length {x.shape[1]} does not match "
                         f"{weights.shape[0]} weight rows")
    return x @ weights + bias, (x, weights)


def dense_backward(dy, cache):
    if cache is None:
        raise ValueError("dense_backward needs the forward cache")
    x, weights = cache
    return dy @ weights.T, x.T @ dy, dy.sum(axis=0)


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dy, shape):
    if shape is None:
        raise ValueError("flatten_backward needs the forward cache")
    return dy.reshape(shape)


def l2_loss(y_true, y_pred):
    """Batch-mean squared Euclidean distance and its gradient in y_pred."""
    y_true = np.atleast_2d(y_true)
    y_pred = np.atleast_2d(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    diff = y_pred - y_true
    loss = float(np.sum(diff * diff) / y_true.shape[0])
    return loss, (2.0 / y_true.shape[0]) * diff


def he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32):
    """Uniform(-b, b) with b = sqrt(6 / fan_in)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
