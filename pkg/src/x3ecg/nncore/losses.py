"""Scalar losses; each returns a 0-d Tensor recorded on the active tape."""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError, ShapeError
from .core import Tensor, as_tensor, record
from .ops import _sigmoid, _softmax


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean negative log-likelihood of integer class targets, via log-sum-exp."""
    target = np.asarray(target, dtype=np.int64)
    n, c = logits.shape
    if target.shape != (n,):
        raise ShapeError(f"cross_entropy: targets {target.shape} do not match logits {logits.shape}")
    if np.any((target < 0) | (target >= c)):
        raise ParameterError(f"cross_entropy: target index out of range [0, {c})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out = Tensor(np.mean(lse - z[np.arange(n), target]))

    def bw(g):
        grad = _softmax(z, axis=1)
        grad[np.arange(n), target] -= 1.0
        return (grad * (g / n),)

    return record(out, (logits,), bw)


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all N*C entries, stable in the logit."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} do not match logits {logits.shape}")
    z = logits.data
    out = Tensor(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
    return record(out, (logits,), lambda g: ((_sigmoid(z) - t) * (g / z.size),))


def mae(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at ties is 0."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae: prediction {pred.shape} does not match target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor(np.mean(np.abs(diff)))
    sign = np.sign(diff)
    return record(out, (pred, target), lambda g: (sign * (g / n), -sign * (g / n)))
