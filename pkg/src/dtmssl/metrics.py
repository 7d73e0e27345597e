"""Confusion matrices and macro-averaged F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from dtmssl.errors import ValidationError


def confusion(preds, truth, k: int) -> np.ndarray:
    """``K x K`` count matrix indexed ``[true, predicted]``."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValidationError(f"preds {preds.shape} and truth {truth.shape} must be equal-length 1-D")
    if preds.size and (min(preds.min(), truth.min()) < 0 or max(preds.max(), truth.max()) >= k):
        raise ValidationError(f"class index outside [0, {k})")
    if preds.size and not (np.issubdtype(preds.dtype, np.integer) and np.issubdtype(truth.dtype, np.integer)):
        raise ValidationError("class indices must be integers")
    return np.bincount(truth.astype(np.int64) * k + preds.astype(np.int64), minlength=k * k).reshape(k, k)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den != 0)


@dataclass
class MetricsReport:
    per_class_f1: list[float]
    macro_f1: float
    precision: list[float]
    recall: list[float]
    support: list[int]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def macro_f1(cm: np.ndarray) -> MetricsReport:
    """One-vs-rest precision/recall/F1 per class and their unweighted mean.

    Any ratio with a zero denominator is reported as 0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return MetricsReport(
        per_class_f1=[float(v) for v in f1],
        macro_f1=float(f1.mean()),
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        support=[int(v) for v in cm.sum(axis=1)],
    )


def evaluate(preds, truth, k: int) -> MetricsReport:
    return macro_f1(confusion(preds, truth, k))
