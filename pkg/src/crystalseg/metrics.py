"""
Segmentation and classification scores.

Undefined ratios (precision with no predicted positives, recall with no
true positives in the reference) are returned as ``nan``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .forest import N_CLASSES, ClassLabel
from .segment import threshold_probmap


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def mask_counts(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Pixel counts with particle as the positive class."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ContractError(f"mask dimension mismatch: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def dice(counts: ConfusionCounts) -> float:
    """``2TP / (2TP + FP + FN)``; 1.0 (with a warning) when neither mask has positives."""
    den = 2 * counts.tp + counts.fp + counts.fn
    if den == 0:
        warnings.warn("Dice of two empty masks is taken as 1.0", stacklevel=2)
        return 1.0
    return 2 * counts.tp / den


def precision(counts: ConfusionCounts) -> float:
    den = counts.tp + counts.fp
    return counts.tp / den if den else math.nan


def recall(counts: ConfusionCounts) -> float:
    den = counts.tp + counts.fn
    return counts.tp / den if den else math.nan


@dataclass(frozen=True)
class SegmentationScores:
    dice: float
    precision: float
    recall: float


def scores(counts: ConfusionCounts) -> SegmentationScores:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = dice(counts)
    return SegmentationScores(d, precision(counts), recall(counts))


def pooled_scores(per_image: Sequence[ConfusionCounts]) -> tuple[SegmentationScores, SegmentationScores]:
    """
    Dataset-level scores as ``(micro, macro)``.

    Micro pools pixel counts over all images; macro averages per-image
    scores, skipping undefined values.
    """
    if not per_image:
        raise ContractError("no images to score")
    total = per_image[0]
    for c in per_image[1:]:
        total = total + c
    each = [scores(c) for c in per_image]

    def mean(vals: Iterable[float]) -> float:
        v = [x for x in vals if not math.isnan(x)]
        return sum(v) / len(v) if v else math.nan

    macro = SegmentationScores(
        mean(s.dice for s in each), mean(s.precision for s in each), mean(s.recall for s in each)
    )
    return scores(total), macro


def pr_curve(prob: np.ndarray, truth: np.ndarray, thresholds: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(t, precision, recall)`` for each threshold, thresholds ascending."""
    p = np.asarray(prob, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ContractError(f"probability map {p.shape} and truth {t.shape} differ in size")
    ts = list(thresholds)
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be sorted ascending")
    out = []
    for thr in ts:
        c = mask_counts(threshold_probmap(p, thr), t)
        out.append((float(thr), precision(c), recall(c)))
    return out


def pr_curve_counts(probs: Sequence[np.ndarray], truths: Sequence[np.ndarray], thresholds: Sequence[float]) -> list[ConfusionCounts]:
    """Pooled confusion counts per threshold over several images."""
    pooled = [ConfusionCounts(0, 0, 0, 0) for _ in thresholds]
    for prob, truth in zip(probs, truths):
        for i, thr in enumerate(thresholds):
            pooled[i] = pooled[i] + mask_counts(threshold_probmap(prob, thr), truth)
    return pooled


# ---------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------
def confusion_matrix(pairs: Iterable[tuple[int, int]], n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    n = 0
    for true, pred in pairs:
        cm[int(true), int(pred)] += 1
        n += 1
    if n == 0:
        raise ContractError("confusion matrix needs at least one pair")
    return cm


def normalize_rows(cm: np.ndarray) -> np.ndarray:
    """Row-stochastic view; empty rows stay zero."""
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that have at least one true sample."""
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise ContractError("balanced accuracy of an empty confusion matrix")
    return float(np.mean(np.diag(cm)[present] / rows[present]))


def population_stats(labels: Iterable[int]) -> dict[str, float]:
    """
    Orientation and fault fractions of predicted labels.

    ``fraction_oriented`` = (SF + NoSF) / (SF + NoSF + Misoriented) and
    ``fraction_faulted_of_oriented`` = SF / (SF + NoSF). Agglomerations and
    empty regions are ignored; a zero denominator gives ``nan``.
    """
    labs = [int(v) for v in labels]
    if not labs:
        raise ContractError("population_stats needs at least one label")
    counts = np.bincount(labs, minlength=N_CLASSES)
    sf = int(counts[ClassLabel.STACKING_FAULT])
    nosf = int(counts[ClassLabel.NO_STACKING_FAULT])
    mis = int(counts[ClassLabel.MISORIENTED])
    oriented = sf + nosf
    return {
        "fraction_oriented": oriented / (oriented + mis) if oriented + mis else math.nan,
        "fraction_faulted_of_oriented": sf / oriented if oriented else math.nan,
    }
