"""Secondary detector: a small CNN that predicts whether the primary model is right."""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from engine import layers as kernels
from engine.network import Sequential, glorot_uniform
from engine.tensor import LayerSpec, as_tensor, chain
from models.optimizers import Adam
from models.surrogate_model import SurrogateModel, predict
from services.uncertainty_scorer import cusp_scores
from utils.exceptions import ProtocolError, UsageError
from utils.objective import focal_bce_logits
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class DetectorConfig(BaseModel):
    """Architecture and training hyperparameters of the detector."""

    model_config = ConfigDict(extra="forbid")

    filters: Tuple[int, int] = (8, 16)
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-2, gt=0.0)
    gamma: float = Field(2.0, ge=0.0)


@dataclass
class DetectorRecords:
    """Detector inputs and correctness labels built from a held-out split."""

    s: np.ndarray
    targets: np.ndarray
    mse: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def counts(self) -> dict:
        return {"correct": int(self.labels.sum()), "incorrect": int(len(self.labels) - self.labels.sum())}


def build_records(model: SurrogateModel, patterns, images, truth) -> DetectorRecords:
    """Predicted surrogates, predicted-class patterns, mse and correctness labels."""
    prediction = predict(model, images)
    s = np.atleast_2d(prediction.s)
    predicted = np.atleast_2d(prediction.y).argmax(axis=1)
    targets = patterns.matrix[predicted]
    labels = (predicted == np.asarray(truth)).astype(np.float64)
    return DetectorRecords(s=s, targets=targets, mse=cusp_scores(s, targets, "mse"), labels=labels)


class DetectorModel:
    """
    conv -> relu -> pool -> conv -> relu -> pool -> flatten, joined with the
    scalar mse and mapped by one dense unit to a sigmoid "correct" probability.
    """

    def __init__(self, trunk: Sequential, head: LayerSpec, head_params: List[np.ndarray], side: int):
        self.trunk = trunk
        self.head = head
        self.head_params = head_params
        self.side = side
        self._head_cache = None

    @classmethod
    def build(cls, side: int, filters: Tuple[int, int], seed: int) -> "DetectorModel":
        first, second = filters
        specs = chain(
            (2, side, side),
            [
                {"kind": "conv2d", "out_channels": first},
                {"kind": "relu"},
                {"kind": "maxpool2d"},
                {"kind": "conv2d", "out_channels": second},
                {"kind": "relu"},
                {"kind": "maxpool2d"},
                {"kind": "flatten"},
            ],
        )
        features = specs[-1].output_shape[0]
        head = LayerSpec("dense", (features + 1,), out_features=1)
        rng = np.random.default_rng(seed)
        params = glorot_uniform(specs + [head], rng)
        return cls(Sequential(specs, params[:-1]), head, params[-1], side)

    def parameters(self) -> List[np.ndarray]:
        return self.trunk.parameters() + list(self.head_params)

    def _inputs(self, s, targets, mse) -> Tuple[np.ndarray, np.ndarray]:
        s = np.atleast_2d(as_tensor(s))
        targets = np.atleast_2d(as_tensor(targets))
        mse = np.atleast_1d(as_tensor(mse))
        m = self.side * self.side
        if s.shape != targets.shape or s.shape[1] != m or len(mse) != len(s):
            raise UsageError(
                f"detector expects surrogates and patterns of {m} pixels and one mse per sample, "
                f"got {s.shape}, {targets.shape}, {mse.shape}"
            )
        x = np.stack([s, targets], axis=1).reshape(len(s), 2, self.side, self.side)
        return x, mse

    def logits(self, s, targets, mse, keep_cache: bool = False) -> np.ndarray:
        x, mse = self._inputs(s, targets, mse)
        features = self.trunk.forward(x, keep_cache=keep_cache)
        joined = np.concatenate([features, mse[:, None]], axis=1)
        out, cache = kernels.forward(self.head, self.head_params, joined)
        if keep_cache:
            self._head_cache = cache
        return out[:, 0]

    def backward(self, dlogits: np.ndarray) -> List[np.ndarray]:
        if self._head_cache is None:
            raise UsageError("no forward cache; call logits(keep_cache=True) first")
        djoined, head_grads = kernels.backward(self.head, self.head_params, self._head_cache, dlogits[:, None])
        trunk_grads = self.trunk.backward(djoined[:, :-1])
        return trunk_grads.flat() + head_grads

    def probability_correct(self, s, targets, mse) -> np.ndarray:
        return expit(self.logits(s, targets, mse))

    def uncertainty(self, s, targets, mse) -> np.ndarray:
        """Complement of the "correct" probability, per sample."""
        return 1.0 - self.probability_correct(s, targets, mse)


def train_detector(records: DetectorRecords, cfg: DetectorConfig, seed: int) -> DetectorModel:
    """
    Fit the detector to correctness labels with the focal loss.

    Args:
        records: Records from the validation split
        cfg: Architecture and optimizer settings
        seed: Seed for initialization and shuffling

    Returns:
        Trained DetectorModel

    Raises:
        ProtocolError: If every record carries the same label
    """
    labels = np.asarray(records.labels, dtype=np.float64)
    if len(labels) == 0 or labels.min() == labels.max():
        raise ProtocolError("degenerate labels: detector records need both correct and incorrect predictions")
    side = int(round(np.sqrt(records.s.shape[1])))
    detector = DetectorModel.build(side, cfg.filters, derive_seed(seed, "detector", "init"))
    optimizer = Adam(detector.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(derive_seed(seed, "detector", "shuffle"))
    n = len(labels)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = detector.logits(records.s[idx], records.targets[idx], records.mse[idx], keep_cache=True)
            value, dlogits = focal_bce_logits(logits, labels[idx], cfg.gamma)
            optimizer.step(detector.backward(dlogits))
            total += value * len(idx)
        logger.debug("detector epoch %d/%d focal loss %.5f", epoch, cfg.epochs, total / n)
    logger.info("detector trained on %d records (%d correct)", n, int(labels.sum()))
    return detector


def detector_score(detector: DetectorModel, s, pattern, mse: float) -> float:
    """Uncertainty of one sample: 1 - detector output."""
    bits = np.asarray(getattr(pattern, "bits", pattern), dtype=np.float64).ravel()
    return float(detector.uncertainty(np.asarray(s).ravel(), bits, [mse])[0])
