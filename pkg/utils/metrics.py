"""Accuracy, rank-statistic AUC and fixed-grid ROC curves."""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from utils.exceptions import UsageError
from utils.file_io import PathLike, atomic_write_text

ROC_THRESHOLDS = 100

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def accuracy(predictions, truths) -> float:
    """Fraction of exact matches between predicted and true labels."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.size == 0 or predictions.shape != truths.shape:
        raise UsageError("accuracy needs two non-empty label arrays of equal length")
    return float(np.mean(predictions == truths))


def _split_by_label(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise UsageError("scores and labels must have equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise UsageError("labels must be binary")
    positive = labels == 1
    if positive.all() or not positive.any():
        raise UsageError("AUC needs both positive and negative samples")
    return scores, positive


def auc(scores, labels) -> float:
    """
    Area under the ROC curve as the Mann-Whitney rank statistic.

    Ties between a positive and a negative score count one half.

    Args:
        scores: Scores oriented "higher = positive"
        labels: Binary labels (1 = condition being detected)

    Returns:
        AUC in [0, 1]
    """
    scores, positive = _split_by_label(scores, labels)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_brute_force(scores, labels) -> float:
    """Pairwise-counting AUC; O(P*N) reference for :func:`auc`."""
    scores, positive = _split_by_label(scores, labels)
    pos = scores[positive][:, None]
    neg = scores[~positive][None, :]
    concordant = np.count_nonzero(pos > neg)
    tied = np.count_nonzero(pos == neg)
    return float((concordant + 0.5 * tied) / (pos.size * neg.size))


def minmax_normalize(scores) -> np.ndarray:
    """Affine map of scores onto [0, 1]; a constant vector maps to zeros."""
    scores = np.asarray(scores, dtype=np.float64)
    low, high = scores.min(), scores.max()
    if high == low:
        return np.zeros_like(scores)
    return (scores - low) / (high - low)


@dataclass
class RocCurve:
    """(threshold, TPR, FPR) triples on the grid t_k = k / 99."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "tpr": self.tpr, "fpr": self.fpr})

    def to_csv(self, path: PathLike) -> Path:
        return atomic_write_text(path, self.to_frame().to_csv(index=False, lineterminator="\n"))

    def area(self) -> float:
        """Trapezoidal area of the grid curve, closed at (0, 0)."""
        fpr = np.concatenate([self.fpr[::-1], [1.0]])
        tpr = np.concatenate([self.tpr[::-1], [1.0]])
        fpr = np.concatenate([[0.0], fpr])
        tpr = np.concatenate([[0.0], tpr])
        return float(_trapezoid(tpr, fpr))


def roc_100(scores, labels) -> RocCurve:
    """
    ROC points at 100 evenly spaced thresholds in [0, 1].

    Args:
        scores: Scores already normalized to [0, 1]
        labels: Binary labels (1 = positive)

    Returns:
        RocCurve where a sample is called positive when score >= threshold
    """
    scores, positive = _split_by_label(scores, labels)
    thresholds = np.arange(ROC_THRESHOLDS) / (ROC_THRESHOLDS - 1)
    called = scores[None, :] >= thresholds[:, None]
    tpr = called[:, positive].mean(axis=1)
    fpr = called[:, ~positive].mean(axis=1)
    return RocCurve(thresholds=thresholds, tpr=tpr, fpr=fpr)
