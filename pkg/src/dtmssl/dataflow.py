"""Synthetic imbalanced data, balanced sampling and weak/strong augmentation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dtmssl.errors import ConfigError

# Largest:smallest ratio of 10:1, adjacent to what skewed expression datasets show.
DEFAULT_CLASS_COUNTS = (50, 30, 15, 5)


@dataclass
class Dataset:
    """Feature matrix plus optional labels.

    ``hidden_labels`` carries the ground truth of an unlabeled pool and is only
    read by diagnostics. ``segment_ids`` groups frames of the held-out stream
    into videos for temporal smoothing.
    """

    features: np.ndarray
    labels: np.ndarray | None
    class_count: int
    seed: int | None = None
    hidden_labels: np.ndarray | None = None
    segment_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite values")
        for name in ("labels", "hidden_labels"):
            lab = getattr(self, name)
            if lab is None:
                continue
            if lab.shape != (len(self),):
                raise ConfigError(f"{name} length {lab.shape} does not match {len(self)} rows")
            if lab.size and (lab.min() < 0 or lab.max() >= self.class_count):
                raise ConfigError(f"{name} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return self.features.shape[0]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, idx: np.ndarray) -> "Dataset":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(self.features[idx], pick(self.labels), self.class_count, self.seed,
                       pick(self.hidden_labels), pick(self.segment_ids))


@dataclass(frozen=True)
class ImbalanceSpec:
    per_class_counts: tuple[int, ...] = DEFAULT_CLASS_COUNTS

    def __post_init__(self):
        counts = tuple(int(c) for c in self.per_class_counts)
        if len(counts) < 2:
            raise ConfigError("need at least two classes")
        if min(counts) < 1:
            raise ConfigError(f"every class needs at least one sample, got {counts}")
        object.__setattr__(self, "per_class_counts", counts)

    @property
    def num_classes(self) -> int:
        return len(self.per_class_counts)


@dataclass(frozen=True)
class AugmentConfig:
    weak_noise_sigma: float = 0.3
    strong_noise_sigma: float = 0.8
    strong_dropout_prob: float = 0.2

    def __post_init__(self):
        if not self.strong_noise_sigma >= self.weak_noise_sigma >= 0.0:
            raise ConfigError("require strong_noise_sigma >= weak_noise_sigma >= 0")
        if not 0.0 <= self.strong_dropout_prob <= 1.0:
            raise ConfigError("strong_dropout_prob must lie in [0, 1]")


def class_means(k: int, d: int, class_sep: float, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.standard_normal((k, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return class_sep * dirs


def generate_synthetic(
    spec: ImbalanceSpec,
    d: int,
    class_sep: float,
    seed: int,
    n_unlabeled: int = 5000,
    heldout_runs_per_class: int = 20,
    run_length: tuple[int, int] = (30, 60),
    runs_per_segment: int = 8,
    noise_sigma: float = 1.0,
    unlabeled_proportions: tuple[float, ...] | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Draw labeled, unlabeled and held-out sets from shared Gaussian clusters.

    The unlabeled pool follows the class proportions of ``spec`` unless
    ``unlabeled_proportions`` is given. The
    held-out set is class-balanced and arranged as a frame stream: each class
    contributes ``heldout_runs_per_class`` runs of constant label with length
    drawn from ``run_length`` (inclusive), runs are shuffled and cut into
    segments of ``runs_per_segment`` runs.
    """
    if d < 2:
        raise ConfigError(f"d must be >= 2, got {d}")
    if not class_sep > 0:
        raise ConfigError(f"class_sep must be positive, got {class_sep}")
    if n_unlabeled < 1 or heldout_runs_per_class < 1 or runs_per_segment < 1:
        raise ConfigError("pool sizes must be positive")
    lo, hi = run_length
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad run_length {run_length}")

    k = spec.num_classes
    rng_means, rng_lab, rng_unl, rng_held = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    means = class_means(k, d, class_sep, rng_means)

    def draw(labels, rng):
        return means[labels] + noise_sigma * rng.standard_normal((labels.shape[0], d))

    counts = np.array(spec.per_class_counts)
    y_lab = np.repeat(np.arange(k), counts)
    labeled = Dataset(draw(y_lab, rng_lab), y_lab, k, seed)

    if unlabeled_proportions is None:
        probs = counts / counts.sum()
    else:
        probs = np.asarray(unlabeled_proportions, dtype=np.float64)
        if probs.shape != (k,) or np.any(probs < 0) or probs.sum() <= 0:
            raise ConfigError(f"unlabeled_proportions must be {k} non-negative weights")
        probs = probs / probs.sum()
    y_unl = rng_unl.choice(k, size=n_unlabeled, p=probs)
    unlabeled = Dataset(draw(y_unl, rng_unl), None, k, seed, hidden_labels=y_unl)

    run_labels = rng_held.permutation(np.repeat(np.arange(k), heldout_runs_per_class))
    lengths = rng_held.integers(lo, hi + 1, size=run_labels.shape[0])
    y_held = np.repeat(run_labels, lengths)
    seg = np.repeat(np.arange(run_labels.shape[0]) // runs_per_segment, lengths)
    heldout = Dataset(draw(y_held, rng_held), y_held, k, seed, segment_ids=seg)
    return labeled, unlabeled, heldout


def balanced_indices(labels: np.ndarray, k: int, n_per_class: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``n_per_class`` indices per class, class-sorted.

    Classes with fewer than ``n_per_class`` members are drawn with
    replacement, the rest without.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    out = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise ConfigError(f"class {c} has no labeled samples")
        out.append(rng.choice(members, size=n_per_class, replace=members.size < n_per_class))
    return np.concatenate(out)


def balanced_sample(labeled: Dataset, n_per_class: int, rng: np.random.Generator) -> Dataset:
    if labeled.labels is None:
        raise ConfigError("balanced sampling needs labels")
    return labeled.subset(balanced_indices(labeled.labels, labeled.class_count, n_per_class, rng))


def weak_augment(x: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian jitter; works on a single row or a batch."""
    x = np.asarray(x, dtype=np.float64)
    return x + config.weak_noise_sigma * rng.standard_normal(x.shape)


def strong_augment(x: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Heavier jitter followed by independent per-component zeroing."""
    x = np.asarray(x, dtype=np.float64)
    noisy = x + config.strong_noise_sigma * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= config.strong_dropout_prob
    return np.where(keep, noisy, 0.0)


def save_csv(dataset: Dataset, path: str | Path, include_labels: bool = True) -> None:
    """Header ``x0..x{d-1}`` plus a trailing ``label`` column when labels exist."""
    d = dataset.features.shape[1]
    with_labels = include_labels and dataset.labels is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(d)] + (["label"] if with_labels else []))
        for i, row in enumerate(dataset.features):
            vals = [repr(float(v)) for v in row]
            if with_labels:
                vals.append(str(int(dataset.labels[i])))
            w.writerow(vals)


def load_csv(path: str | Path, class_count: int | None = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    has_labels = header[-1] == "label"
    d = len(header) - int(has_labels)
    feats = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    labels = np.array([int(r[d]) for r in body], dtype=np.int64) if has_labels else None
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels is not None and labels.size else 1
    return Dataset(feats, labels, class_count)
