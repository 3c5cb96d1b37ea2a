"""Summary statistics and z-style gaps between groups of uncertainty scores."""
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np


@dataclass
class ScoreSummary:
    """Location and spread of one group of scores."""

    count: int
    mean: float
    median: float
    std: float
    standard_error: float

    def to_dict(self) -> Dict:
        return asdict(self)


def summarize(scores) -> ScoreSummary:
    """
    Count, mean, median, sample std and standard error of ``scores``.

    Args:
        scores: 1-D array of scores

    Returns:
        ScoreSummary; std and standard error are 0 for fewer than 2 scores
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    count = int(scores.size)
    if count == 0:
        return ScoreSummary(0, float("nan"), float("nan"), 0.0, 0.0)
    std = float(np.std(scores, ddof=1)) if count > 1 else 0.0
    return ScoreSummary(
        count=count,
        mean=float(np.mean(scores)),
        median=float(np.median(scores)),
        std=std,
        standard_error=std / np.sqrt(count),
    )


def gap_in_standard_errors(a, b) -> float:
    """
    Difference of group means in units of its standard error.

    Args:
        a: Scores of the first group (e.g. flipped samples)
        b: Scores of the second group (e.g. clean samples)

    Returns:
        ``(mean_a - mean_b) / sqrt(se_a**2 + se_b**2)``; 0 when both groups
        are constant with equal means
    """
    first, second = summarize(a), summarize(b)
    if first.count == 0 or second.count == 0:
        return 0.0
    difference = first.mean - second.mean
    spread = np.hypot(first.standard_error, second.standard_error)
    if spread == 0:
        return 0.0 if difference == 0 else float(np.copysign(np.inf, difference))
    return float(difference / spread)
