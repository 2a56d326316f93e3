"""Evaluation metrics: hard-mask segmentation scores, micro-averaged
classification scores, and the confusion matrix both feed from.

Masks are counted exactly (integer arithmetic); the degenerate empty-vs-empty
comparison scores 1.0 by convention so a correct all-background prediction
is not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatrix, ShapeMismatch


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are actual classes, columns predicted."""

    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ShapeMismatch(
                f"counts {self.counts.shape} do not match {k} class names")
        if (self.counts < 0).any():
            raise ShapeMismatch("confusion counts must be nonnegative")

    @staticmethod
    def from_predictions(y_true, y_pred, class_names) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise ShapeMismatch(
                f"label vectors must be 1-D and equal length, got {y_true.shape} vs {y_pred.shape}")
        k = len(class_names)
        if len(y_true) and (min(y_true.min(), y_pred.min()) < 0
                            or max(y_true.max(), y_pred.max()) >= k):
            raise ShapeMismatch(f"labels out of range for {k} classes")
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return ConfusionMatrix(counts, class_names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        """Row-normalized rates; empty rows stay all-zero."""
        counts = self.counts.astype(np.float64)
        row = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, row, out=np.zeros_like(counts), where=row > 0)

    def to_lists(self) -> dict:
        return {"counts": self.counts.tolist(), "class_names": list(self.class_names)}

    @staticmethod
    def from_lists(d: dict) -> "ConfusionMatrix":
        return ConfusionMatrix(np.asarray(d["counts"], dtype=np.int64), tuple(d["class_names"]))


def seg_metrics(pred_mask: np.ndarray, gt_mask: np.ndarray) -> tuple:
    """(pixel_accuracy, iou, dice) from two binary masks, counted exactly."""
    p = np.asarray(pred_mask)
    g = np.asarray(gt_mask)
    if p.shape != g.shape:
        raise ShapeMismatch(f"masks differ: {p.shape} vs {g.shape}")
    for name, m in (("pred", p), ("gt", g)):
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0, 1))):
            raise ShapeMismatch(f"{name} mask must be binary, found values {vals[:5]}")
    p = p.astype(bool)
    g = g.astype(bool)
    accuracy = float(np.mean(p == g)) if p.size else 1.0
    inter = int(np.sum(p & g))
    union = int(np.sum(p | g))
    iou = 1.0 if union == 0 else inter / union
    # Derived from iou so the hard-mask identity dice = 2*iou/(1+iou)
    # holds bit-exactly, not merely to rounding.
    dice = 2.0 * iou / (1.0 + iou)
    return accuracy, iou, dice


def cls_metrics(confusion: ConfusionMatrix) -> tuple:
    """(accuracy, precision, recall, f1), micro-averaged over classes.

    Per class: TP is the diagonal cell, FP the rest of its column, FN the
    rest of its row, TN everything else; sums over classes feed the four
    ratios.  A zero denominator yields 0.
    """
    counts = confusion.counts
    total = counts.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    tp = np.diag(counts).astype(np.int64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    tn = total - tp - fp - fn

    def ratio(num, den):
        return float(num / den) if den > 0 else 0.0

    accuracy = ratio((tp + tn).sum(), (tp + tn + fp + fn).sum())
    precision = ratio(tp.sum(), (tp + fp).sum())
    recall = ratio(tp.sum(), (tp + fn).sum())
    f1 = ratio(2.0 * precision * recall, precision + recall)
    return accuracy, precision, recall, f1


@dataclass
class MetricsReport:
    """One evaluation pass, flat so every tool shares a schema.

    Fields that do not apply to the evaluated model stay 0.0 (a segmentation
    pass has no classifier scores and vice versa).
    """

    dice: float = 0.0
    iou: float = 0.0
    pixel_accuracy: float = 0.0
    loss_focal: float = 0.0
    loss_jaccard: float = 0.0
    loss_total: float = 0.0
    cls_accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    confusion: ConfusionMatrix | None = None

    RATE_FIELDS = ("dice", "iou", "pixel_accuracy", "cls_accuracy",
                   "precision", "recall", "f1")

    def __post_init__(self):
        for name in self.RATE_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ShapeMismatch(f"{name} must lie in [0, 1], got {v}")

    def to_json_dict(self) -> dict:
        d = {name: float(getattr(self, name)) for name in
             ("dice", "iou", "pixel_accuracy", "loss_focal", "loss_jaccard",
              "loss_total", "cls_accuracy", "precision", "recall", "f1")}
        d["confusion"] = self.confusion.to_lists() if self.confusion else None
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "MetricsReport":
        conf = d.get("confusion")
        return MetricsReport(
            dice=d.get("dice", 0.0), iou=d.get("iou", 0.0),
            pixel_accuracy=d.get("pixel_accuracy", 0.0),
            loss_focal=d.get("loss_focal", 0.0),
            loss_jaccard=d.get("loss_jaccard", 0.0),
            loss_total=d.get("loss_total", 0.0),
            cls_accuracy=d.get("cls_accuracy", 0.0),
            precision=d.get("precision", 0.0), recall=d.get("recall", 0.0),
            f1=d.get("f1", 0.0),
            confusion=ConfusionMatrix.from_lists(conf) if conf else None)
