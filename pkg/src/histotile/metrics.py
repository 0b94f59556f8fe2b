"""Confusion matrix and the four reported binary-classification metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

POSITIVE_CLASS = "SCC"  # convention: SCC is the positive class


class LengthMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Count outcomes; probability >= threshold predicts the positive class."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {y.shape} labels")
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must lie in (0, 1), got {threshold}")
    pred_pos = p >= threshold
    actual_pos = y.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(pred_pos & actual_pos)),
        fp=int(np.sum(pred_pos & ~actual_pos)),
        fn=int(np.sum(~pred_pos & actual_pos)),
        tn=int(np.sum(~pred_pos & ~actual_pos)),
    )


def compute_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Accuracy, precision, recall, F1; ratios with empty denominators are 0."""
    if cm.total == 0:
        raise EmptyMatrix("no evaluated samples")
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def format_report(cm: ConfusionMatrix) -> str:
    """One tab-separated line: the four metrics then the four counts."""
    m = compute_metrics(cm)
    values = [f"{m[k]:.4f}" for k in ("accuracy", "precision", "recall", "f1")]
    values += [str(v) for v in (cm.tp, cm.fp, cm.fn, cm.tn)]
    return "\t".join(values) + "\n"
