"""Training loop: combined loss, Adam with L2 decay, cosine-then-flat schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import nncore as nn
from .errors import DivergenceError, ParameterError
from .model import X3ECG

HISTORY_COLUMNS = ("epoch", "lr", "train_cls", "train_hc", "val_cls", "val_hc", "val_macro_f1")


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    lr_min: float = 1e-4
    cosine_epochs: int = 40
    epochs: int = 70
    weight_decay: float = 5e-5
    lam: float = 0.02
    batch_size: int = 32
    seed: int = 0
    task: str = "multi-class"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_hc_bias: bool = True  # start the count head at the mean training count

    def __post_init__(self):
        if self.epochs < 1 or self.cosine_epochs < 1:
            raise ParameterError("epochs and cosine_epochs must be positive")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2 (batch norm), got {self.batch_size}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be non-negative, got {self.lam}")
        if self.task not in ("multi-class", "multi-label"):
            raise ParameterError(f"unknown task {self.task!r}")


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Cosine decay from ``lr0`` to ``lr_min`` over ``cosine_epochs``, then flat."""
    if epoch < 0 or epoch >= cfg.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch >= cfg.cosine_epochs:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * epoch / cfg.cosine_epochs))


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One Adam update; weight decay is added to the gradient (L2, not decoupled).

    Parameters without a gradient (e.g. a disabled head) are left untouched.
    """
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def classification_loss(logits: nn.Tensor, targets, task: str) -> nn.Tensor:
    if task == "multi-class":
        return nn.cross_entropy(logits, targets)
    return nn.bce_with_logits(logits, targets)


def combined_loss(logits, targets, n_pred, n_gt, lam: float, task: str = "multi-class"):
    """``L_cls + lam * MAE(n_pred, n_gt)``; returns the loss and its float parts.

    Without a heartbeat prediction the loss is the classification term alone.
    """
    l_cls = classification_loss(logits, targets, task)
    if n_pred is None:
        return l_cls, {"cls": l_cls.item(), "hc": float("nan")}
    l_hc = nn.mae(n_pred, np.asarray(n_gt, dtype=np.float64))
    return l_cls + l_hc * lam, {"cls": l_cls.item(), "hc": l_hc.item()}


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; a trailing batch of one joins the previous batch."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def train_step(model: X3ECG, xb, db, yb, nb, lr: float, state: AdamState, cfg: TrainConfig, rng):
    """Forward, backward and one optimizer update on a single batch."""
    model.zero_grad()
    with nn.Tape() as tape:
        out = model.forward(xb, db, "train", rng)
        loss, parts = combined_loss(out.logits, yb, out.n_pred, nb, cfg.lam, cfg.task)
    if not np.isfinite(loss.item()):
        raise DivergenceError(f"non-finite loss {loss.item()} at optimizer step {state.t + 1}")
    nn.backward(loss, tape)
    adam_step(model.params, state, lr, cfg)
    return parts


def predict(model: X3ECG, x, demog, batch_size: int = 64):
    """Eval-mode probabilities, logits and heartbeat predictions."""
    logits, counts = [], []
    for i in range(0, len(x), batch_size):
        out = model.forward(x[i : i + batch_size], demog[i : i + batch_size], "eval")
        logits.append(out.logits.data)
        if out.n_pred is not None:
            counts.append(out.n_pred.data)
    z = np.concatenate(logits)
    if model.config.task == "multi-class":
        probs = nn.ops._softmax(z, axis=1)
    else:
        probs = nn.ops._sigmoid(z)
    return probs, z, (np.concatenate(counts) if counts else None)


def init_heartbeat_bias(model: X3ECG, n_gt) -> None:
    """Set the count head's bias to the mean target count.

    Adam moves a parameter by roughly ``lr`` per step, so a zero-initialized
    bias would need thousands of steps to reach counts of 10-30 beats.
    """
    model.params["hc.b"].data[:] = float(np.mean(n_gt))


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_macro_f1: float
    thresholds: Optional[np.ndarray] = None


def validate(model: X3ECG, val, task: str):
    """Validation losses and macro-F1 (multi-label thresholds tuned on ``val``)."""
    from .evaluate import evaluate_probs, threshold_search

    probs, logits, counts = predict(model, val.x, val.demog)
    z = nn.Tensor(logits)
    cls = classification_loss(z, val.y, task).item()
    hc = float(np.mean(np.abs(counts - val.n_gt))) if counts is not None else float("nan")
    thresholds = threshold_search(probs, val.y) if task == "multi-label" else None
    metrics = evaluate_probs(probs, val.y, task, thresholds)
    return cls, hc, metrics.macro_f1, thresholds


def fit(model: X3ECG, train, val, cfg: TrainConfig,
        callbacks: Sequence[Callable] = ()) -> FitResult:
    """Train ``model`` in place and restore the parameters of the best epoch.

    The best epoch maximizes validation macro-F1; ties go to the later epoch.
    Each callback is called as ``cb(row, model)`` after every epoch.
    """
    if len(train) < 2:
        raise ParameterError(f"training split needs at least 2 recordings, got {len(train)}")
    if len(val) < 1:
        raise ParameterError("validation split is empty")
    if model.config.task != cfg.task:
        raise ParameterError(f"model task {model.config.task!r} != training task {cfg.task!r}")
    if cfg.init_hc_bias and model.config.use_hc:
        init_heartbeat_bias(model, train.n_gt)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = []
    best = (-1.0, -1, None, None)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        sums = {"cls": 0.0, "hc": 0.0}
        for b in make_batches(len(train), cfg.batch_size, rng):
            parts = train_step(model, train.x[b], train.demog[b], train.y[b], train.n_gt[b], lr, state, cfg, rng)
            for k in sums:
                sums[k] += parts[k] * len(b)
        val_cls, val_hc, val_f1, thr = validate(model, val, cfg.task)
        row = {"epoch": epoch, "lr": lr, "train_cls": sums["cls"] / len(train),
               "train_hc": sums["hc"] / len(train), "val_cls": val_cls, "val_hc": val_hc,
               "val_macro_f1": val_f1}
        history.append(row)
        if val_f1 >= best[0]:
            best = (val_f1, epoch, model.state(), thr)
        for cb in callbacks:
            cb(row, model)
    model.load_state(best[2])
    return FitResult(history, best[1], best[0], best[3])


def write_history(history: list, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            f.write(",".join(repr(row[c]) if c != "epoch" else str(row[c]) for c in HISTORY_COLUMNS) + "\n")
