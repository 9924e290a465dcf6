from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .core import Tape, Tensor, backward


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
               max_probes: Optional[int] = None, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn(*inputs)`` must return a scalar Tensor and be deterministic (re-seed
    any dropout rng inside ``fn``). Only inputs with ``requires_grad`` are
    probed. With ``max_probes`` set, that many coordinates per input are
    drawn at random instead of probing every element. ``floor`` bounds the
    relative-error denominator from below so that gradients which are exactly
    zero (e.g. a bias feeding batch norm) are judged on an absolute scale.
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = fn(*inputs)
    backward(loss, tape)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = rng.choice(flat.size, size=max_probes, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*inputs).item()
            flat[i] = orig - eps
            f_minus = fn(*inputs).item()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
