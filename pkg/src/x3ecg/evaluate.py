"""Metrics, per-class threshold search and cross-validation aggregation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, ShapeError

THRESHOLD_GRID = np.round(np.arange(1, 20) * 0.05, 2)
REPORT_COLUMNS = ("class", "f1_mean", "f1_std", "threshold_mode")


@dataclass
class ConfusionCounts:
    """Per-class one-vs-rest counts."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def from_predictions(cls, pred, target, task: str, num_classes: int) -> "ConfusionCounts":
        pred, target = np.asarray(pred), np.asarray(target)
        if task == "multi-class":
            if pred.shape != target.shape or pred.ndim != 1:
                raise ShapeError(f"expected matching [N] index arrays, got {pred.shape} and {target.shape}")
            p = np.eye(num_classes, dtype=bool)[pred.astype(np.int64)]
            t = np.eye(num_classes, dtype=bool)[target.astype(np.int64)]
        else:
            if pred.shape != target.shape or pred.ndim != 2:
                raise ShapeError(f"expected matching [N, C] arrays, got {pred.shape} and {target.shape}")
            p, t = pred.astype(bool), target.astype(bool)
        return cls((p & t).sum(0), (p & ~t).sum(0), (~p & t).sum(0), (~p & ~t).sum(0))


def f1_scores(counts: ConfusionCounts) -> tuple[np.ndarray, float]:
    """Per-class F1 (0 where a class has no positives and no predictions) and macro-F1."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    f1 = np.where(denom > 0, 2 * counts.tp / np.maximum(denom, 1), 0.0)
    return f1, float(np.mean(f1))


def accuracy(pred, target, task: str) -> float:
    """Fraction correct; in multi-label mode, the mean over all N*C binary decisions."""
    pred, target = np.asarray(pred), np.asarray(target)
    if len(pred) == 0:
        raise ParameterError("accuracy of an empty set")
    if task == "multi-class":
        return float(np.mean(pred == target))
    return float(np.mean(pred.astype(bool) == target.astype(bool)))


def _f1_binary(pred: np.ndarray, target: np.ndarray) -> float:
    tp = np.sum(pred & target)
    denom = 2 * tp + np.sum(pred & ~target) + np.sum(~pred & target)
    return 2 * tp / denom if denom else 0.0


def threshold_search(probs, targets, grid: Sequence[float] = THRESHOLD_GRID) -> np.ndarray:
    """Per-class threshold maximizing F1 of ``prob >= t``; ties go to the lowest t."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets).astype(bool)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise ShapeError(f"expected matching [N, C] arrays, got {probs.shape} and {targets.shape}")
    out = np.empty(probs.shape[1])
    for c in range(probs.shape[1]):
        best_f, best_t = -1.0, grid[0]
        for t in grid:
            f = _f1_binary(probs[:, c] >= t, targets[:, c])
            if f > best_f:
                best_f, best_t = f, t
        out[c] = best_t
    return out


def apply_thresholds(probs, thresholds) -> np.ndarray:
    return (np.asarray(probs) >= np.asarray(thresholds)[None, :]).astype(np.int64)


@dataclass
class RoundMetrics:
    per_class_f1: np.ndarray
    macro_f1: float
    accuracy: float
    thresholds: Optional[np.ndarray] = None


def evaluate_probs(probs, targets, task: str, thresholds=None) -> RoundMetrics:
    probs = np.asarray(probs)
    if task == "multi-class":
        pred = np.argmax(probs, axis=1)
    else:
        if thresholds is None:
            raise ParameterError("multi-label evaluation needs thresholds chosen on the validation split")
        pred = apply_thresholds(probs, thresholds)
    counts = ConfusionCounts.from_predictions(pred, targets, task, probs.shape[1])
    f1, macro = f1_scores(counts)
    thr = None if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    return RoundMetrics(f1, macro, accuracy(pred, targets, task), thr)


def evaluate_round(model, split, thresholds=None) -> RoundMetrics:
    """Test-split metrics: argmax for multi-class, fixed per-class thresholds for multi-label."""
    from .train import predict

    if len(split) == 0:
        raise ParameterError("test split is empty")
    probs, _, _ = predict(model, split.x, split.demog)
    return evaluate_probs(probs, split.y, model.config.task, thresholds)


@dataclass
class MetricsReport:
    f1_mean: np.ndarray
    f1_std: np.ndarray
    macro_f1_mean: float
    macro_f1_std: float
    accuracy_mean: float
    accuracy_std: float
    threshold_mode: Optional[np.ndarray] = None


def _mode(values: np.ndarray) -> float:
    """Most frequent value; ties resolved toward the smallest."""
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])


def aggregate(rounds: Sequence[RoundMetrics], expected: int = 10) -> MetricsReport:
    """Mean and population standard deviation across cross-validation rounds."""
    if len(rounds) != expected:
        raise ParameterError(f"expected {expected} rounds, got {len(rounds)}")
    f1 = np.stack([r.per_class_f1 for r in rounds])
    macro = np.array([r.macro_f1 for r in rounds])
    acc = np.array([r.accuracy for r in rounds])
    mode = None
    if all(r.thresholds is not None for r in rounds):
        thr = np.stack([r.thresholds for r in rounds])
        mode = np.array([_mode(thr[:, c]) for c in range(thr.shape[1])])
    return MetricsReport(f1.mean(0), f1.std(0), float(macro.mean()), float(macro.std()),
                         float(acc.mean()), float(acc.std()), mode)


def write_report(report: MetricsReport, class_names: Sequence[str], path) -> None:
    """Per-class rows, then ``macro_f1`` and ``accuracy`` summary rows."""
    lines = [",".join(REPORT_COLUMNS)]
    for c, name in enumerate(class_names):
        mode = "argmax" if report.threshold_mode is None else f"{report.threshold_mode[c]:.2f}"
        lines.append(f"{name},{report.f1_mean[c]!r},{report.f1_std[c]!r},{mode}")
    lines.append(f"macro_f1,{report.macro_f1_mean!r},{report.macro_f1_std!r},")
    lines.append(f"accuracy,{report.accuracy_mean!r},{report.accuracy_std!r},")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_thresholds(thresholds, class_names: Sequence[str], path) -> None:
    with open(path, "w") as f:
        f.write("class,threshold\n")
        for name, t in zip(class_names, thresholds):
            f.write(f"{name},{t:.2f}\n")


def write_curves(histories: Sequence[list], path) -> None:
    """Per-round training curves in long format (one row per round and epoch)."""
    from .train import HISTORY_COLUMNS

    with open(path, "w") as f:
        f.write("round," + ",".join(HISTORY_COLUMNS) + "\n")
        for r, hist in enumerate(histories):
            for row in hist:
                f.write(f"{r}," + ",".join(str(row[c]) if c == "epoch" else repr(row[c])
                                           for c in HISTORY_COLUMNS) + "\n")
