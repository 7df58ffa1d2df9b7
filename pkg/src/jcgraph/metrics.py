"""Accuracy, F1 variants, expected calibration error, and loss-gap curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PredictionBatch",
    "accuracy",
    "f1_scores",
    "multilabel_f1",
    "ece",
    "loss_gap",
]


@dataclass(frozen=True)
class PredictionBatch:
    """Class-probability rows with the matching true class ids."""

    probs: np.ndarray
    y_true: np.ndarray
    indices: np.ndarray | None = None

    def __post_init__(self):
        if self.probs.ndim != 2 or self.probs.shape[0] != self.y_true.shape[0]:
            raise ValueError("probs and y_true disagree on batch size")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


def accuracy(p: PredictionBatch) -> float:
    """Fraction of argmax matches (ties go to the lowest class index)."""
    if p.y_true.size == 0:
        raise ValueError("empty batch")
    return float((np.argmax(p.probs, axis=1) == p.y_true).mean())


def _f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def f1_scores(p: PredictionBatch) -> tuple[float, float, float]:
    """(micro, macro, weighted) F1.

    Macro averages over all classes; a class with zero support contributes 0.
    Weighted weights each class F1 by its support.
    """
    if p.y_true.size == 0:
        raise ValueError("empty batch")
    c = p.num_classes
    pred = np.argmax(p.probs, axis=1)
    tp = np.zeros(c)
    fp = np.zeros(c)
    fn = np.zeros(c)
    for k in range(c):
        tp[k] = np.sum((pred == k) & (p.y_true == k))
        fp[k] = np.sum((pred == k) & (p.y_true != k))
        fn[k] = np.sum((pred != k) & (p.y_true == k))
    micro = _f1_from_counts(tp.sum(), fp.sum(), fn.sum())
    per_class = np.array([_f1_from_counts(tp[k], fp[k], fn[k]) for k in range(c)])
    macro = float(per_class.mean())
    support = np.bincount(p.y_true, minlength=c)
    weighted = float((per_class * support).sum() / support.sum())
    return float(micro), macro, weighted


def multilabel_f1(probs: np.ndarray, y_true: np.ndarray, threshold: float = 0.5):
    """(micro, macro, weighted) F1 for multi-label tasks, binarized per class."""
    pred = probs >= threshold
    y = y_true > 0.5
    tp = (pred & y).sum(axis=0).astype(float)
    fp = (pred & ~y).sum(axis=0).astype(float)
    fn = (~pred & y).sum(axis=0).astype(float)
    micro = _f1_from_counts(tp.sum(), fp.sum(), fn.sum())
    per_task = np.array([_f1_from_counts(tp[k], fp[k], fn[k]) for k in range(tp.size)])
    support = y.sum(axis=0)
    weighted = float((per_task * support).sum() / support.sum()) if support.sum() else 0.0
    return float(micro), float(per_task.mean()), weighted


def ece(p: PredictionBatch, bins: int = 10) -> float:
    """Expected calibration error over equal-width right-inclusive bins on (0, 1]."""
    if p.y_true.size == 0:
        raise ValueError("empty batch")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    conf = p.probs.max(axis=1)
    correct = (np.argmax(p.probs, axis=1) == p.y_true).astype(np.float64)
    idx = np.ceil(conf * bins).astype(np.int64) - 1
    idx = np.clip(idx, 0, bins - 1)
    n = conf.size
    total = 0.0
    for b in range(bins):
        members = idx == b
        cnt = members.sum()
        if cnt == 0:
            continue
        total += (cnt / n) * abs(correct[members].mean() - conf[members].mean())
    return float(total)


def loss_gap(train_curve, test_curve) -> np.ndarray:
    """Per-epoch (test - train) loss gap, scaled by its own max absolute value."""
    train_curve = np.asarray(train_curve, dtype=np.float64)
    test_curve = np.asarray(test_curve, dtype=np.float64)
    if train_curve.shape != test_curve.shape:
        raise ValueError("curve length mismatch")
    gap = test_curve - train_curve
    peak = np.abs(gap).max() if gap.size else 0.0
    if peak == 0.0:
        return np.zeros_like(gap)
    return gap / peak
