"""Dense NCHW float32 kernels used by the detector.

Tensors are plain ``numpy.ndarray`` objects of shape
``(batch, channels, height, width)`` and dtype float32.  Every forward kernel
has a matching backward; the backward functions take whatever the forward
returned as its cache.

Convolutions are stride-1 cross-correlations with zero "same" padding and no
bias.  They are lowered to a single matmul per call via im2col.
"""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DTYPE = np.float32
LEAKY_SLOPE = 0.1
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99
THREADS_ENV = "SSSDET_THREADS"


def as_tensor(x, name="tensor"):
    """Validate and convert ``x`` to a 4-D float32 array."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ConfigError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ConfigError(f"{name} has an empty dimension: {x.shape}")
    return x


@contextlib.contextmanager
def thread_limit(threads=None):
    """Limit BLAS threads for the enclosed block.

    ``None`` falls back to the ``SSSDET_THREADS`` environment variable, and
    to the library default when that is unset too.
    """
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, int(threads))):
        yield


# --------------------------------------------------------------------------
# convolution


def _im2col(x, k):
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(cols, shape, k):
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(shape)
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            out[:, :, dy:dy + h, dx:dx + w] += cols[:, :, dy, dx]
    return out[:, :, p:p + h, p:p + w]


def conv2d_forward(x, weights, name=None):
    """Stride-1, same-padded, bias-free cross-correlation.

    Returns ``(output, cache)``; ``cache`` feeds :func:`conv2d_backward`.
    """
    x = as_tensor(x, "conv input")
    weights = np.asarray(weights, dtype=DTYPE)
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ConfigError(f"conv weights must be (Cout, Cin, k, k), got {weights.shape}", layer=name)
    cout, cin, k, _ = weights.shape
    if k % 2 != 1:
        raise ConfigError(f"kernel size must be odd, got {k}", layer=name)
    n, c, h, w = x.shape
    if c != cin:
        raise ConfigError(f"input has {c} channels, weights expect {cin}", layer=name)
    cols = _im2col(x, k)
    out = np.matmul(weights.reshape(cout, -1), cols)
    return out.reshape(n, cout, h, w), (cols, x.shape, weights)


def conv2d_backward(cache, grad_out, name=None):
    """Gradients ``(grad_input, grad_weights)`` of :func:`conv2d_forward`."""
    cols, in_shape, weights = cache
    cout, cin, k, _ = weights.shape
    n, _, h, w = in_shape
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != (n, cout, h, w):
        raise ConfigError(
            f"grad_out shape {grad_out.shape} != forward output {(n, cout, h, w)}", layer=name)
    g = grad_out.reshape(n, cout, h * w)
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weights.shape)
    grad_cols = np.matmul(weights.reshape(cout, -1).T, g)
    return _col2im(grad_cols, in_shape, k), grad_w.astype(DTYPE, copy=False)


# --------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    rolling_mean: np.ndarray
    rolling_var: np.ndarray
    eps: float = BN_EPSILON
    momentum: float = field(default=BN_MOMENTUM, repr=False)

    @classmethod
    def identity(cls, channels, eps=BN_EPSILON):
        return cls(
            gamma=np.ones(channels, DTYPE),
            beta=np.zeros(channels, DTYPE),
            rolling_mean=np.zeros(channels, DTYPE),
            rolling_var=np.ones(channels, DTYPE),
            eps=eps,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


def _bcast(v):
    return np.asarray(v, dtype=DTYPE)[None, :, None, None]


def batchnorm_forward(x, params, mode="infer", update_stats=True):
    """Per-channel batch normalization.

    In ``"train"`` mode batch statistics over ``(N, H, W)`` are used (biased
    variance) and, unless ``update_stats`` is false, the rolling statistics
    are moved toward them by an exponential moving average.  Returns
    ``(output, cache)``.
    """
    x = as_tensor(x, "batchnorm input")
    if params.channels != x.shape[1]:
        raise ConfigError(f"batchnorm has {params.channels} channels, input has {x.shape[1]}")
    if mode == "infer":
        scale = params.gamma / np.sqrt(params.rolling_var + params.eps)
        shift = params.beta - params.rolling_mean * scale
        return (x * _bcast(scale) + _bcast(shift)).astype(DTYPE), ("infer", scale)
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = (1.0 / np.sqrt(var + params.eps)).astype(DTYPE)
    xhat = (x - _bcast(mean)) * _bcast(inv_std)
    if update_stats:
        m = params.momentum
        params.rolling_mean[...] = m * params.rolling_mean + (1 - m) * mean
        params.rolling_var[...] = m * params.rolling_var + (1 - m) * var
    out = xhat * _bcast(params.gamma) + _bcast(params.beta)
    return out.astype(DTYPE), ("train", xhat, inv_std, params.gamma)


def batchnorm_backward(cache, grad_out):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if cache[0] == "infer":
        # rolling stats are constants here; gamma/beta grads are not needed
        return grad_out * _bcast(cache[1]), None, None
    _, xhat, inv_std, gamma = cache
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    dxhat = grad_out * _bcast(gamma)
    grad_in = (_bcast(inv_std) / m) * (
        m * dxhat - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return grad_in.astype(DTYPE), grad_gamma.astype(DTYPE), grad_beta.astype(DTYPE)


# --------------------------------------------------------------------------
# activations and pooling


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = np.asarray(x, dtype=DTYPE)
    return np.where(x > 0, x, x * DTYPE(slope))


def leaky_relu_backward(x, grad_out, slope=LEAKY_SLOPE):
    """Gradient of :func:`leaky_relu` at ``x``; the subgradient at 0 is ``slope``."""
    x = np.asarray(x, dtype=DTYPE)
    return np.where(x > 0, grad_out, grad_out * DTYPE(slope)).astype(DTYPE)


def maxpool2x2_forward(x, name=None):
    """Non-overlapping 2x2 max pooling.

    Returns ``(output, argmax)`` where ``argmax`` holds, per output element,
    the row-major position (0..3) of the winner inside its window.  Ties go
    to the first position.
    """
    x = as_tensor(x, "maxpool input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool needs even spatial size, got {h}x{w}", layer=name)
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(argmax, grad_out):
    n, c, ho, wo = argmax.shape
    onehot = np.arange(4) == argmax[..., None]
    g = np.where(onehot, np.asarray(grad_out, dtype=DTYPE)[..., None], DTYPE(0))
    g = g.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(n, c, ho * 2, wo * 2)


def sigmoid(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.result_type(x, DTYPE))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)
