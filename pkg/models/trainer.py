"""Training loop for the combined classification + reconstruction objective."""
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.optimizers import make_optimizer
from models.surrogate_model import SurrogateModel
from utils.exceptions import NumericError, UsageError
from utils.objective import combined
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Hyperparameters of one training run."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.5, ge=0.0)
    epochs: int = Field(30, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    optimizer: Literal["adam", "sgd-momentum"] = "adam"
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0, lt=2**64)


@dataclass
class EpochStats:
    """Per-epoch averages over all training samples."""

    epoch: int
    loss: float
    classification: float
    reconstruction: float
    accuracy: float
    pixel_mse: float


@dataclass
class TrainReport:
    alpha: float
    reconstruction_reduction: str = "sum over pixels, mean over batch"
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochStats]:
        return self.epochs[-1] if self.epochs else None

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha,
            "alpha_zero": self.alpha == 0,
            "reconstruction_reduction": self.reconstruction_reduction,
            "epochs": [asdict(e) for e in self.epochs],
        }


def train(
    model: SurrogateModel,
    data,
    patterns,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochStats, SurrogateModel], None]] = None,
) -> TrainReport:
    """
    Minimize CCE + alpha * BCE(surrogate, pattern of the true class).

    Args:
        model: Model updated in place
        data: Object with ``images`` (N, H, W) and ``labels`` (N,)
        patterns: PatternSet with ``K == model.K`` and ``m == model.m``
        cfg: Training hyperparameters
        on_epoch: Callback invoked after every epoch

    Returns:
        Per-epoch averages of L, L1, L2, accuracy and per-pixel MSE

    Raises:
        NumericError: If a batch loss is not finite
    """
    images = np.asarray(data.images, dtype=np.float64)
    labels = np.asarray(data.labels, dtype=np.int64)
    if len(images) != len(labels) or len(labels) == 0:
        raise UsageError("training data must be non-empty with one label per image")
    if patterns.K != model.K or patterns.m != model.m:
        raise UsageError(f"patterns (K={patterns.K}, m={patterns.m}) do not fit model (K={model.K}, m={model.m})")
    if labels.min() < 0 or labels.max() >= model.K:
        raise UsageError(f"labels must lie in [0, {model.K})")
    if cfg.alpha == 0:
        logger.warning("alpha=0: training without the pattern reconstruction term")

    optimizer = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    targets = patterns.matrix
    n = len(labels)
    report = TrainReport(alpha=cfg.alpha)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(4)  # L1, L2, correct, pixel squared error
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch_labels = labels[idx]
            outputs = model.forward(images[idx])
            value, dz, ds = combined(outputs.z, outputs.s_logits, batch_labels, targets, cfg.alpha)
            if not np.isfinite(value.total):
                raise NumericError("training loss is not finite", epoch=epoch, batch=batch_index)
            grads = model.backward(dz, ds)
            optimizer.step(grads.flat())

            size = len(idx)
            sums += (
                value.classification * size,
                value.reconstruction * size,
                np.count_nonzero(outputs.z.argmax(axis=1) == batch_labels),
                np.mean((outputs.s - targets[batch_labels]) ** 2, axis=1).sum(),
            )
        l1, l2 = sums[0] / n, sums[1] / n
        stats = EpochStats(
            epoch=epoch,
            loss=l1 + cfg.alpha * l2,
            classification=l1,
            reconstruction=l2,
            accuracy=sums[2] / n,
            pixel_mse=sums[3] / n,
        )
        report.epochs.append(stats)
        logger.info(
            "epoch %d/%d  L=%.5f  L1=%.5f  L2=%.5f  acc=%.4f  mse=%.4f",
            epoch, cfg.epochs, stats.loss, l1, l2, stats.accuracy, stats.pixel_mse,
        )
        if on_epoch is not None:
            on_epoch(stats, model)
    return report
