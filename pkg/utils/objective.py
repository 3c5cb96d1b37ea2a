"""Training objectives: CCE + alpha * pattern BCE, and the focal loss.

Batched variants average over the batch; the reconstruction term is summed
over the pattern pixels of each sample before averaging.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax

from utils.exceptions import UsageError

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))


@dataclass(frozen=True)
class LossValue:
    """Total, classification and reconstruction loss of one evaluation."""

    total: float
    classification: float
    reconstruction: float
    alpha: float


def _check_label(t: int, k: int):
    if not 0 <= int(t) < k:
        raise UsageError(f"class index {t} outside [0, {k})")


def cce(y, t: int) -> Tuple[float, np.ndarray]:
    """
    Categorical cross entropy of one probability vector.

    Args:
        y: Class probabilities (sums to 1)
        t: Ground-truth class index

    Returns:
        ``(-log y[t], y - onehot(t))``; the second item is the gradient w.r.t.
        the class logits that produced ``y``
    """
    y = np.asarray(y, dtype=np.float64)
    _check_label(t, y.shape[-1])
    if abs(y.sum() - 1.0) > 1e-9:
        raise UsageError("class probabilities must sum to 1")
    grad = y.copy()
    grad[t] -= 1.0
    return float(-np.log(max(y[t], PROB_FLOOR))), grad


def cce_logits(z: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Batch-mean CCE computed from logits.

    Args:
        z: Class logits ``(N, K)``
        labels: Integer labels ``(N,)``

    Returns:
        ``(mean loss, d loss / d z)``
    """
    n, k = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    log_probs = log_softmax(z, axis=1)
    losses = -np.maximum(log_probs[rows, labels], LOG_FLOOR)
    grad = softmax(z, axis=1)
    grad[rows, labels] -= 1.0
    return float(losses.mean()), grad / n


def _bce_terms(z: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) - z * p + np.log1p(np.exp(-np.abs(z)))


def bce_reconstruction(s_logits, p) -> Tuple[float, np.ndarray]:
    """
    Pixel-summed binary cross entropy between surrogate logits and a pattern.

    Args:
        s_logits: Pre-sigmoid surrogate activations (length m)
        p: Binary pattern (length m)

    Returns:
        ``(loss, sigmoid(s_logits) - p)``
    """
    z = np.asarray(s_logits, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if z.size != p.size:
        raise UsageError(f"surrogate has {z.size} values, pattern has {p.size}")
    return float(_bce_terms(z, p).sum()), expit(z) - p


def bce_reconstruction_batch(s_logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """Batch mean of :func:`bce_reconstruction`; returns the gradient scaled by 1/N."""
    if s_logits.shape != targets.shape:
        raise UsageError(f"surrogate shape {s_logits.shape} != target shape {targets.shape}")
    n = s_logits.shape[0]
    loss = _bce_terms(s_logits, targets).sum(axis=1).mean()
    return float(loss), (expit(s_logits) - targets) / n


def combined(z, s_logits, labels, patterns, alpha: float) -> Tuple[LossValue, np.ndarray, np.ndarray]:
    """
    The CUSP objective L = L1 + alpha * L2 on a batch.

    Args:
        z: Class logits ``(N, K)`` (a single sample is promoted to a batch)
        s_logits: Surrogate logits ``(N, m)``
        labels: Ground-truth labels ``(N,)``; the target pattern of sample i
            is ``patterns[labels[i]]``
        patterns: Array ``(K, m)`` of binary patterns or a PatternSet
        alpha: Reconstruction weight (>= 0)

    Returns:
        ``(LossValue, dL/dz, dL/ds_logits)``
    """
    if alpha < 0:
        raise UsageError("alpha must be non-negative")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    s_logits = np.atleast_2d(np.asarray(s_logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    matrix = np.asarray(getattr(patterns, "matrix", patterns), dtype=np.float64)
    if matrix.shape[0] != z.shape[1]:
        raise UsageError(f"{matrix.shape[0]} patterns for {z.shape[1]} classes")

    l1, dz = cce_logits(z, labels)
    if alpha == 0:
        l2 = 0.0
        ds = np.zeros_like(s_logits)
    else:
        l2, ds = bce_reconstruction_batch(s_logits, matrix[labels])
        ds = alpha * ds
    value = LossValue(total=l1 + alpha * l2, classification=l1, reconstruction=l2, alpha=alpha)
    return value, dz, ds


def focal_bce(prob, label, gamma: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Focal loss -(1 - p_t)^gamma * log(p_t) for sigmoid outputs.

    Args:
        prob: Sigmoid output(s) in (0, 1)
        label: Binary label(s)
        gamma: Focusing parameter (>= 0); 0 gives plain BCE

    Returns:
        ``(loss, d loss / d prob)`` with the same shape as ``prob``
    """
    if gamma < 0:
        raise UsageError("gamma must be non-negative")
    prob = np.asarray(prob, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    sign = np.where(label > 0.5, 1.0, -1.0)
    p_t = np.where(label > 0.5, prob, 1.0 - prob)
    clamped = np.maximum(p_t, PROB_FLOOR)
    log_p = np.log(clamped)
    loss = -((1.0 - p_t) ** gamma) * log_p
    with np.errstate(divide="ignore", invalid="ignore"):
        focus = gamma * (1.0 - p_t) ** (gamma - 1.0) * log_p if gamma > 0 else np.zeros_like(p_t)
        focus = np.where(np.isfinite(focus), focus, 0.0)
    grad_pt = focus - (1.0 - p_t) ** gamma / clamped
    return loss, sign * grad_pt


def focal_bce_logits(logits: np.ndarray, labels: np.ndarray, gamma: float = 2.0) -> Tuple[float, np.ndarray]:
    """
    Batch-mean focal loss evaluated from pre-sigmoid logits.

    Args:
        logits: Detector logits ``(N,)``
        labels: Binary labels ``(N,)``
        gamma: Focusing parameter

    Returns:
        ``(mean loss, d loss / d logits)``
    """
    logits = np.asarray(logits, dtype=np.float64)
    sign = np.where(np.asarray(labels) > 0.5, 1.0, -1.0)
    u = sign * logits
    p_t = expit(u)
    log_p = np.maximum(log_expit(u), LOG_FLOOR)
    weight = (1.0 - p_t) ** gamma
    losses = -weight * log_p
    grad_u = gamma * weight * p_t * log_p - (1.0 - p_t) ** (gamma + 1.0)
    return float(losses.mean()), sign * grad_u / logits.size
