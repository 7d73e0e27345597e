"""Majority-vote smoothing of frame-ordered label sequences."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from dtmssl.errors import ValidationError

DEFAULT_WINDOW = 10


def _segment_starts(segments: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]])


def smooth(labels, window: int = DEFAULT_WINDOW, segments=None, k: int | None = None) -> np.ndarray:
    """Replace every label in each tumbling block of ``window`` frames by the
    block's most frequent label (ties to the smallest index).

    Blocks restart at every change of ``segments`` so they never straddle two
    videos; the last block of a segment may be shorter than ``window``.
    """
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return labels.copy()
    if labels.min() < 0 or (k is not None and labels.max() >= k):
        raise ValidationError("label outside the class range")
    k = int(labels.max()) + 1 if k is None else k
    if segments is None:
        bounds = [0, labels.size]
    else:
        segments = np.asarray(segments)
        if segments.shape != labels.shape:
            raise ValidationError("segments must align with labels")
        bounds = list(_segment_starts(segments)) + [labels.size]
    out = np.empty_like(labels)
    for s0, s1 in zip(bounds[:-1], bounds[1:]):
        for b0 in range(s0, s1, window):
            b1 = min(b0 + window, s1)
            out[b0:b1] = np.bincount(labels[b0:b1], minlength=k).argmax()
    return out


def write_sequence_csv(path: str | Path, labels, segments=None) -> None:
    """Columns ``segment_id, frame_index, label``; frame index restarts per segment."""
    labels = np.asarray(labels, dtype=np.int64)
    segments = np.zeros_like(labels) if segments is None else np.asarray(segments)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "frame_index", "label"])
        frame = 0
        for i, (seg, lab) in enumerate(zip(segments, labels)):
            frame = 0 if i == 0 or seg != segments[i - 1] else frame + 1
            w.writerow([seg, frame, int(lab)])


def read_sequence_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(labels, segment_ids)`` in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["segment_id", "frame_index", "label"]:
            raise ValidationError(f"unexpected header {reader.fieldnames}")
        rows = list(reader)
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    segs = np.array([r["segment_id"] for r in rows])
    return labels, segs
