"""Classification metrics with a binarised positive set.

Any zero denominator yields 0 for that metric.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    recall: float
    precision: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, accuracy: float | None = None) -> Metrics:
    counts = (tp, fp, tn, fn)
    if any(c < 0 for c in counts):
        raise ValueError("confusion counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("confusion counts are all zero")
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    if accuracy is None:
        accuracy = (tp + tn) / total
    return Metrics(accuracy, recall, precision, f1_score(precision, recall), tp, fp, tn, fn)


def classification_metrics(y_true, y_pred, positive_classes) -> Metrics:
    """Accuracy on the raw labels; recall/precision/F1 on ``label in positive_classes``.

    For a three-class task with both impaired groups positive this follows
    the ternary recall convention.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("y_true and y_pred must be non-empty and equally shaped")
    pos = np.asarray(sorted(positive_classes))
    t, p = np.isin(y_true, pos), np.isin(y_pred, pos)
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    tn = int(np.sum(~t & ~p))
    fn = int(np.sum(t & ~p))
    return metrics_from_counts(tp, fp, tn, fn, accuracy=float(np.mean(y_true == y_pred)))


def summarize(rows: list[Metrics]) -> dict:
    """Mean and (population) standard deviation of each headline metric."""
    out = {}
    for key in ("accuracy", "recall", "precision", "f1"):
        vals = np.array([getattr(r, key) for r in rows])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
