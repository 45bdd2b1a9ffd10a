"""Confusion matrices, accuracy and the Matthews correlation coefficient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed ``[gold][predicted]``."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, gold: Sequence[int], predicted: Sequence[int], num_labels: int) -> ConfusionMatrix:
        m = np.zeros((num_labels, num_labels), dtype=np.int64)
        np.add.at(m, (np.asarray(gold, dtype=np.intp), np.asarray(predicted, dtype=np.intp)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts)) / self.total


def mcc(cm: ConfusionMatrix | np.ndarray) -> float:
    """Matthews correlation coefficient, multiclass (Gorodkin) form.

    Reduces to ``(TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN))`` for
    two classes. Returns 0.0 when the denominator vanishes.
    """
    C = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {C.shape}")
    if (C < 0).any():
        raise ValueError("confusion matrix has negative counts")
    s = C.sum()
    if s == 0:
        raise ValueError("mcc of an empty confusion matrix")
    c = np.trace(C)
    t = C.sum(axis=1)  # true counts per class
    p = C.sum(axis=0)  # predicted counts per class
    cov_tp = c * s - t @ p
    cov_pp = s * s - p @ p
    cov_tt = s * s - t @ t
    if cov_pp == 0 or cov_tt == 0:
        return 0.0
    return float(cov_tp / np.sqrt(cov_pp * cov_tt))


def binary_mcc(tp: float, tn: float, fp: float, fn: float) -> float:
    return mcc(np.array([[tp, fn], [fp, tn]]))
