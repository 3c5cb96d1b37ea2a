"""Input corruptions, the fast gradient sign attack and label flipping."""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import map_coordinates

from utils.exceptions import ConfigurationError, UsageError
from utils.objective import combined
from utils.seeding import make_rng

logger = logging.getLogger(__name__)


class AttackConfig(BaseModel):
    """Step size and valid pixel range of an FGM attack."""

    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(0.1, ge=0.0)
    lo: float = 0.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _check_range(self):
        if not self.lo < self.hi:
            raise ValueError(f"clamp range needs lo < hi, got [{self.lo}, {self.hi}]")
        return self


class FlipSpec(BaseModel):
    """Class pairs whose labels get flipped, the flip rate and its seed."""

    model_config = ConfigDict(extra="forbid")

    pairs: List[Tuple[int, int]] = Field(default_factory=lambda: [(1, 7), (4, 9), (3, 8)])
    rate: float = Field(0.3, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_pairs(self):
        for source, target in self.pairs:
            if source == target:
                raise ValueError(f"flip pair ({source} -> {target}) maps a class onto itself")
            if source < 0 or target < 0:
                raise ValueError("flip classes must be non-negative")
        return self


def fgm_attack(model, x, labels, patterns, cfg: AttackConfig, alpha: float = 0.5) -> np.ndarray:
    """
    One fast-gradient-sign step against the model's own training loss.

    Args:
        model: SurrogateModel under attack (its forward cache is overwritten)
        x: Images ``(N, H, W)`` or a single image, values in [lo, hi]
        labels: True labels
        patterns: PatternSet (or matrix) used by the reconstruction term
        cfg: Step size and clamp range
        alpha: Reconstruction weight of J; 0 attacks plain cross-entropy

    Returns:
        ``clamp(x + epsilon * sign(grad_x J), lo, hi)`` with the shape of ``x``
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < cfg.lo or x.max() > cfg.hi):
        raise UsageError(f"attack inputs must lie in [{cfg.lo}, {cfg.hi}]")
    if cfg.epsilon == 0:
        return x.copy()
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))

    def loss(outputs):
        value, dz, ds = combined(outputs.z, outputs.s_logits, labels, patterns, alpha)
        return value.total, dz, ds

    _, grads = model.value_and_grad(x, loss)
    step = np.sign(grads.input).reshape(x.shape)
    return np.clip(x + cfg.epsilon * step, cfg.lo, cfg.hi)


def add_noise(x, sigma: float, seed: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Clamped additive i.i.d. Gaussian noise."""
    if sigma < 0:
        raise ConfigurationError("noise sigma must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    rng = make_rng(seed, "noise")
    return np.clip(x + rng.normal(0.0, sigma, size=x.shape), lo, hi)


def random_erase(x, patch_fraction: float, count: int, seed: int, lo: float = 0.0) -> np.ndarray:
    """
    Set ``count`` random square patches of every image to ``lo``.

    Args:
        x: One image ``(side, side)`` or a batch ``(N, side, side)``
        patch_fraction: Patch side as a fraction of the image side
        count: Patches per image
        seed: Seed for the patch positions
        lo: Fill value

    Returns:
        Erased copy of ``x``
    """
    x = np.array(x, dtype=np.float64)
    if count < 0 or patch_fraction <= 0:
        raise ConfigurationError("random erase needs count >= 0 and patch_fraction > 0")
    side = x.shape[-1]
    patch = int(round(patch_fraction * side))
    if patch > side or x.shape[-2] != side:
        raise ConfigurationError(f"a {patch}-pixel patch does not fit a {x.shape[-2]}x{side} image")
    if count == 0 or patch == 0:
        return x
    rng = make_rng(seed, "erase")
    images = x.reshape(-1, side, side)
    for image in images:
        for _ in range(count):
            top, left = rng.integers(0, side - patch + 1, size=2)
            image[top : top + patch, left : left + patch] = lo
    return images.reshape(x.shape)


def _rotate_one(image: np.ndarray, degrees: float, lo: float) -> np.ndarray:
    side_r, side_c = image.shape
    center_r, center_c = (side_r - 1) / 2.0, (side_c - 1) / 2.0
    theta = np.deg2rad(degrees)
    rows, cols = np.meshgrid(np.arange(side_r) - center_r, np.arange(side_c) - center_c, indexing="ij")
    src_r = center_r + np.cos(theta) * rows - np.sin(theta) * cols
    src_c = center_c + np.sin(theta) * rows + np.cos(theta) * cols
    # snap float noise so quarter turns land on the pixel grid
    coords = np.round(np.stack([src_r, src_c]), 10)
    return map_coordinates(image, coords, order=1, mode="constant", cval=lo)


def rotate(x, degrees: float, lo: float = 0.0) -> np.ndarray:
    """Bilinear rotation about the image centre; uncovered pixels become ``lo``."""
    if not 0.0 <= degrees <= 360.0:
        raise ConfigurationError(f"rotation must lie in [0, 360] degrees, got {degrees}")
    x = np.asarray(x, dtype=np.float64)
    if degrees % 360.0 == 0.0:
        return x.copy()
    if x.ndim == 2:
        return _rotate_one(x, degrees, lo)
    flat = x.reshape((-1,) + x.shape[-2:])
    return np.stack([_rotate_one(image, degrees, lo) for image in flat]).reshape(x.shape)


def flip_labels(labels, spec: FlipSpec, num_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Relabel a seeded share of every source class as its target class.

    Exactly ``round(rate * count(source))`` samples flip per pair (halves
    round up). Eligibility uses the original labels, so pairs never chain.

    Returns:
        ``(flipped labels, boolean mask of flipped samples)``
    """
    original = np.asarray(labels, dtype=np.int64)
    if num_classes is not None:
        for pair in spec.pairs:
            if max(pair) >= num_classes:
                raise ConfigurationError(f"flip pair {pair} is outside the {num_classes} classes")
    flipped = original.copy()
    mask = np.zeros(original.shape, dtype=bool)
    for source, target in spec.pairs:
        eligible = np.flatnonzero(original == source)
        n_flip = int(np.floor(spec.rate * len(eligible) + 0.5))
        if n_flip == 0:
            continue
        rng = make_rng(spec.seed, "flip", source, target)
        chosen = rng.choice(eligible, size=n_flip, replace=False)
        flipped[chosen] = target
        mask[chosen] = True
        logger.debug("flipped %d of %d labels %d -> %d", n_flip, len(eligible), source, target)
    return flipped, mask
