"""Confusion-matrix evaluation: OA, kappa, producer accuracy, weighted F1.

Convention: rows are reference (truth), columns are prediction. The producer
accuracy of class k is the diagonal entry over its row sum (recall); the
reported F1 is the support-weighted mean over classes with nonzero support,
so it tracks overall accuracy on imbalanced maps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import RasterGrid


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (n, n) int64, rows = truth, cols = prediction

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def _class_values(grid_or_array) -> np.ndarray:
    if isinstance(grid_or_array, RasterGrid):
        values = grid_or_array.band(0)
    else:
        values = np.asarray(grid_or_array)
    codes = values.astype(np.int64)
    if not np.array_equal(codes.astype(values.dtype), values):
        raise ValueError("class raster contains non-integer values")
    return codes.ravel()


def confusion(pred, truth, n_classes: int = 9) -> ConfusionMatrix:
    """Tally counts[truth][pred] over all pixels."""
    p = _class_values(pred)
    t = _class_values(truth)
    if p.size != t.size:
        raise ValueError(f"prediction has {p.size} pixels, truth has {t.size}")
    for name, v in (("prediction", p), ("truth", t)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise ValueError(f"{name} contains classes outside 0..{n_classes - 1}")
    counts = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def expected_agreement(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    return float(np.sum(rows * cols) / (total * total))


def kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement; defined as 0 when chance agreement is 1."""
    oa = overall_accuracy(cm)
    pe = expected_agreement(cm)
    if pe >= 1.0:
        return 0.0
    return float((oa - pe) / (1.0 - pe))


def producer_accuracy(cm: ConfusionMatrix) -> list[float]:
    """Per-class recall; 0 for classes with no reference pixels."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    rows = cm.counts.sum(axis=1)
    out = []
    for k in range(cm.n_classes):
        out.append(float(cm.counts[k, k] / rows[k]) if rows[k] else 0.0)
    return out


def f1(cm: ConfusionMatrix) -> float:
    """Support-weighted mean F1 over classes with nonzero support."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    weighted = 0.0
    support = 0.0
    for k in range(cm.n_classes):
        if rows[k] == 0:
            continue
        recall = cm.counts[k, k] / rows[k]
        precision = cm.counts[k, k] / cols[k] if cols[k] else 0.0
        score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        weighted += rows[k] * score
        support += rows[k]
    return float(weighted / support)


def summary(cm: ConfusionMatrix) -> dict:
    return {
        "oa": overall_accuracy(cm),
        "kappa": kappa(cm),
        "f1": f1(cm),
        "pa": producer_accuracy(cm),
    }


def write_metrics_csv(cm: ConfusionMatrix, path: str | Path, label: str = "model") -> None:
    s = summary(cm)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", "oa", "kappa", "f1"] + [f"pa_{k}" for k in range(cm.n_classes)]
        )
        writer.writerow(
            [label, repr(s["oa"]), repr(s["kappa"]), repr(s["f1"])]
            + [repr(v) for v in s["pa"]]
        )


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\pred"] + [str(k) for k in range(cm.n_classes)])
        for k in range(cm.n_classes):
            writer.writerow([str(k)] + [str(int(v)) for v in cm.counts[k]])
