"""Differentiable operations. Every op computes its forward value in numpy and
registers a backward rule on the active tape."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ParameterError, ShapeError
from .core import Tensor, as_tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


# -- shape ops --------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, idx) -> Tensor:
    out = Tensor(x.data[idx])

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return record(out, (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


def tsum(x: Tensor, axis=None) -> Tensor:
    out = Tensor(x.data.sum(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), bw)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = Tensor(x.data.mean(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return record(out, (x,), bw)


# -- layers -----------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = x @ w.T + b with ``x: [N, Din]``, ``w: [Dout, Din]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"dense: bias {b.shape} incompatible with weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def bw(g):
        grads = (g @ w.data, g.T @ x.data)
        return grads + ((g.sum(axis=0),) if b is not None else ())

    return record(out, (x, w) + ((b,) if b is not None else ()), bw)


def _im2col(xp_t: np.ndarray, k: int, stride: int, lout: int) -> np.ndarray:
    """``[Cin, N, Lp]`` -> ``[Cin * K, N * Lout]`` (row index = cin * K + tap)."""
    cin, n, _ = xp_t.shape
    span = stride * (lout - 1) + 1
    cols = np.empty((cin, k, n, lout))
    for j in range(k):
        cols[:, j] = xp_t[:, :, j : j + span : stride]
    return cols.reshape(cin * k, n * lout)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; ``x: [N, Cin, L]``, ``w: [Cout, Cin, K]``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} incompatible with weight {w.shape}")
    n, cin, length = x.shape
    cout, _, k = w.shape
    lout = (length + 2 * padding - k) // stride + 1
    if lout < 1:
        raise ShapeError(f"conv1d: input {x.shape} too short for kernel {k} with padding {padding}")
    # channel-major copy of the padded input makes every tap slice contiguous per channel
    xp_t = np.zeros((cin, n, length + 2 * padding))
    xp_t[:, :, padding : padding + length] = x.data.transpose(1, 0, 2)
    w2 = w.data.reshape(cout, cin * k)
    y = (w2 @ _im2col(xp_t, k, stride, lout)).reshape(cout, n, lout).transpose(1, 0, 2)
    if b is not None:
        y = y + b.data[None, :, None]
    out = Tensor(y)

    def bw(g):
        g2 = g.transpose(1, 0, 2).reshape(cout, n * lout)
        # columns are rebuilt rather than kept alive between forward and backward
        gw = (g2 @ _im2col(xp_t, k, stride, lout).T).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(cin, k, n, lout)
            gxp = np.zeros(xp_t.shape)
            span = stride * (lout - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, j]
            gx = gxp[:, :, padding : padding + length].transpose(1, 0, 2)
        grads = (gx, gw)
        return grads + ((g.sum(axis=(0, 2)),) if b is not None else ())

    return record(out, (x, w) + ((b,) if b is not None else ()), bw)


def maxpool1d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    n, c, length = x.shape
    lout = (length + 2 * padding - kernel) // stride + 1
    if lout < 1:
        raise ShapeError(f"maxpool1d: input {x.shape} too short for kernel {kernel}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf) if padding else x.data
    win = sliding_window_view(xp, kernel, axis=2)[:, :, : stride * (lout - 1) + 1 : stride, :]
    arg = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0])

    def bw(g):
        gxp = np.zeros(xp.shape)
        span = stride * (lout - 1) + 1
        for j in range(kernel):
            gxp[:, :, j : j + span : stride] += np.where(arg == j, g, 0.0)
        return (gxp[:, :, padding : padding + length] if padding else gxp,)

    return record(out, (x,), bw)


class BatchNormStats:
    """Running mean/variance buffers of one batch-norm layer."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)

    def copy(self) -> "BatchNormStats":
        c = BatchNormStats(len(self.mean))
        c.mean, c.var = self.mean.copy(), self.var.copy()
        return c


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running: Optional[BatchNormStats] = None,
                mode: str = "train", eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Batch normalization over ``[N, C]`` or ``[N, C, L]`` inputs.

    Train mode normalizes with the (biased) batch variance and pushes the
    unbiased variance into ``running``; eval mode uses ``running``.
    """
    if x.ndim not in (2, 3) or x.shape[1] != gamma.shape[0] or beta.shape != gamma.shape:
        raise ShapeError(f"batchnorm1d: input {x.shape} incompatible with gamma {gamma.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    m = int(np.prod([x.shape[a] for a in axes]))

    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError(f"batchnorm1d: train mode needs batch size >= 2, got {x.shape[0]}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            running.mean = (1 - momentum) * running.mean + momentum * mean
            running.var = (1 - momentum) * running.var + momentum * var * m / (m - 1)
    elif mode == "eval":
        if running is None:
            raise ParameterError("batchnorm1d: eval mode needs running statistics")
        mean, var = running.mean, running.var
    else:
        raise ParameterError(f"unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = Tensor(gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape))

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        scale = (gamma.data * inv_std).reshape(bshape)
        if mode == "train":
            gx = scale * (g - (gbeta / m).reshape(bshape) - xhat * (ggamma / m).reshape(bshape))
        else:
            gx = g * scale
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), bw)


def global_avg_pool1d(x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool1d expects [N, C, L], got {x.shape}")
    length = x.shape[2]
    out = Tensor(x.data.mean(axis=2))
    return record(out, (x,), lambda g: (np.repeat(g[:, :, None] / length, length, axis=2),))


# -- activations ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.maximum(x.data, 0.0))  # NaN propagates so the divergence guard sees it
    return record(out, (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = Tensor(s)
    return record(out, (x,), lambda g: (g * s * (1.0 - s),))


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax(x.data, axis)
    out = Tensor(s)
    return record(out, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if mode != "train":
        raise ParameterError(f"unknown mode {mode!r}")
    if rng is None:
        raise ParameterError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)
    return record(out, (x,), lambda g: (g * mask,))
