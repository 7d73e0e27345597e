"""Dynamic per-class confidence thresholds driven by the EMA teacher."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dtmssl.errors import ConfigError
from dtmssl.tinynet import ModelParams, predict_proba


@dataclass
class ThresholdState:
    tau: np.ndarray
    mu: float = 0.9
    epoch: int = 0

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if np.any(self.tau < 0.0) or np.any(self.tau > 1.0):
            raise ConfigError(f"thresholds must lie in [0, 1], got {self.tau}")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"mu must lie in [0, 1], got {self.mu}")

    @classmethod
    def initial(cls, k: int, mu: float = 0.9) -> "ThresholdState":
        """Start permissive at chance level 1/K."""
        return cls(np.full(k, 1.0 / k), mu, 0)

    @classmethod
    def fixed(cls, k: int, value: float) -> "ThresholdState":
        return cls(np.full(k, float(value)), 1.0, 0)


@dataclass
class ClassConfidenceStats:
    counts: np.ndarray  # N_c
    sums: np.ndarray  # sum of correct-class confidence
    mean: np.ndarray = field(init=False)  # NaN where N_c == 0

    def __post_init__(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            self.mean = np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)


def teacher_predict(teacher: ModelParams, features: np.ndarray) -> np.ndarray:
    """Teacher probabilities on raw, un-augmented inputs."""
    return predict_proba(teacher, features)


def class_confidences(preds: np.ndarray, labels: np.ndarray) -> ClassConfidenceStats:
    """Per-class mean confidence over correctly classified samples.

    A sample contributes to class ``c`` only when its label is ``c`` and the
    argmax (ties to the lowest index) is also ``c``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = preds.shape[1]
    correct = preds.argmax(axis=1) == labels
    conf = preds[np.arange(labels.shape[0]), labels]
    counts = np.bincount(labels[correct], minlength=k)
    sums = np.bincount(labels[correct], weights=conf[correct], minlength=k)
    return ClassConfidenceStats(counts, sums)


def update_thresholds(state: ThresholdState, stats: ClassConfidenceStats) -> ThresholdState:
    """Momentum blend ``mu * tau_prev + (1 - mu) * tau_c``; classes with no
    correct predictions keep their previous threshold."""
    has = stats.counts > 0
    prev = state.tau
    target = np.where(has, stats.mean, prev)
    tau = np.where(has, np.clip(state.mu * prev + (1.0 - state.mu) * target, 0.0, 1.0), prev)
    # The step equals its bound (1 - mu) * |target - prev| exactly in real
    # arithmetic; pull any rounding overshoot back toward prev one ulp at a time.
    bound = (1.0 - state.mu) * np.abs(target - prev)
    over = np.abs(tau - prev) > bound
    while over.any():
        tau[over] = np.nextafter(tau[over], prev[over])
        over = np.abs(tau - prev) > bound
    return ThresholdState(tau, state.mu, state.epoch + 1)


def write_threshold_csv(path: str | Path, history: list[np.ndarray]) -> None:
    """Rows ``epoch, tau_0 .. tau_{K-1}``; epoch 0 is the initial state."""
    k = len(history[0]) if history else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [f"tau_{c}" for c in range(k)])
        for epoch, tau in enumerate(history):
            w.writerow([epoch] + [repr(float(t)) for t in tau])


def read_threshold_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])
