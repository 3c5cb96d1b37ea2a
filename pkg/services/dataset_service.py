"""Dataset ingestion (IDX files), the synthetic symbol set and experiment splits."""
import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.exceptions import ConfigurationError, CountMismatchError, DataError, IdxFormatError
from utils.file_io import PathLike, atomic_write_bytes, to_gray_bytes
from utils.patterns import SYMBOLS, gen_symbols
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
SPLIT_KINDS = ("ratio-10-1-1", "class-5v5", "train-test")


@dataclass
class Dataset:
    """Grayscale images in [0, 1] with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise DataError(f"images must be N x side x side, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    @property
    def K(self) -> int:
        return len(self.class_names)

    def subset(self, indices, provenance: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices],
            self.labels[indices],
            list(self.class_names),
            provenance or self.provenance,
        )

    def limit(self, n: Optional[int], seed: int) -> "Dataset":
        """Seeded subsample of at most ``n`` samples, kept in source order."""
        if n is None or n >= len(self):
            return self
        rng = make_rng(seed, "limit")
        chosen = np.sort(rng.choice(len(self), size=n, replace=False))
        return self.subset(chosen, f"{self.provenance}[:{n}]")


def _read(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def _parse_idx(data: bytes, expected_magic: int, source: str) -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError(f"{source}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{source}: bad magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{source}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) - header < count:
        raise IdxFormatError(f"{source}: truncated payload ({len(data) - header} of {count} bytes)")
    if len(data) - header > count:
        raise IdxFormatError(f"{source}: {len(data) - header - count} unexpected trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path: PathLike, labels_path: PathLike, class_names: Optional[Sequence[str]] = None) -> Dataset:
    """
    Load an IDX image file (magic 2051) and its label file (magic 2049).

    Files ending in ``.gz`` are decompressed first. Pixels are scaled by 1/255.

    Args:
        images_path: Path of the ``idx3-ubyte`` image file
        labels_path: Path of the ``idx1-ubyte`` label file
        class_names: Optional names; defaults to the label values as strings

    Returns:
        Dataset

    Raises:
        IdxFormatError: Wrong magic, bad dimensions or truncation
        CountMismatchError: Image and label counts differ
    """
    images = _parse_idx(_read(images_path), IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read(labels_path), LABELS_MAGIC, str(labels_path))
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise IdxFormatError(f"{images_path}: expected N x side x side images, got {images.shape}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a 1-D label file, got {labels.shape}")
    if len(images) != len(labels):
        raise CountMismatchError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    if class_names is None:
        class_names = [str(k) for k in range(int(labels.max()) + 1 if len(labels) else 0)]
    dataset = Dataset(images / 255.0, labels, list(class_names), f"idx:{Path(images_path).name}")
    logger.info("loaded %d images of %dx%d from %s", len(dataset), dataset.side, dataset.side, images_path)
    return dataset


def save_idx(dataset: Dataset, images_path: PathLike, labels_path: PathLike) -> Tuple[Path, Path]:
    """Write ``dataset`` as an IDX pair, quantizing pixels to round(255 * x)."""
    n, side = len(dataset), dataset.side
    images = struct.pack(">IIII", IMAGES_MAGIC, n, side, side) + to_gray_bytes(dataset.images).tobytes()
    labels = struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return atomic_write_bytes(images_path, images), atomic_write_bytes(labels_path, labels)


def make_synthetic(K: int, side: int, n_per_class: int, noise_sigma: float, seed: int) -> Dataset:
    """
    Noisy copies of the symbol bank, one symbol per class.

    Args:
        K: Number of classes; at most the size of the symbol bank
        side: Image side
        n_per_class: Samples per class
        noise_sigma: Std of the additive Gaussian noise (clamped to [0, 1])
        seed: Seed for symbols and noise

    Returns:
        Dataset with labels in class-major order
    """
    if K > len(SYMBOLS):
        raise ConfigurationError(f"the symbol bank holds {len(SYMBOLS)} symbols, {K} requested")
    if n_per_class < 1 or noise_sigma < 0:
        raise ConfigurationError("n_per_class must be >= 1 and noise_sigma >= 0")
    bank = gen_symbols(K, side, derive_seed(seed, "synthetic", "symbols")).matrix.reshape(K, side, side)
    labels = np.repeat(np.arange(K), n_per_class)
    images = bank[labels]
    if noise_sigma > 0:
        rng = make_rng(seed, "synthetic", "noise")
        images = np.clip(images + rng.normal(0.0, noise_sigma, size=images.shape), 0.0, 1.0)
    names = list(SYMBOLS)[:K]
    return Dataset(images, labels, names, f"synthetic:K={K},side={side},sigma={noise_sigma},seed={seed}")


@dataclass
class SplitPlan:
    """Index lists of one split; ``in_classes``/``out_classes`` only for class-5v5."""

    kind: str
    seed: int
    indices: Dict[str, np.ndarray] = field(default_factory=dict)
    in_classes: List[int] = field(default_factory=list)
    out_classes: List[int] = field(default_factory=list)

    def sizes(self) -> Dict[str, int]:
        return {name: int(len(idx)) for name, idx in self.indices.items()}


def split(dataset: Dataset, kind: str, seed: int, test_fraction: float = 0.2) -> Tuple[SplitPlan, Dict[str, Dataset]]:
    """
    Partition ``dataset``.

    ``ratio-10-1-1`` yields train/validation/test in the proportions
    10:1:1 (remainders go to train). ``class-5v5`` puts the first K/2
    classes of a seeded permutation "in" (relabelled 0..K/2-1 in ascending
    order of their original label) and the rest "out". ``train-test`` holds
    out ``test_fraction`` of the samples.

    Returns:
        The plan and a dict of sub-datasets keyed like ``plan.indices``
    """
    if kind not in SPLIT_KINDS:
        raise ConfigurationError(f"unknown split kind '{kind}', expected one of {SPLIT_KINDS}")
    rng = make_rng(seed, "split", kind)
    n = len(dataset)
    plan = SplitPlan(kind=kind, seed=seed)

    if kind == "ratio-10-1-1":
        order = rng.permutation(n)
        held = n // 12
        n_train = n - 2 * held
        plan.indices = {
            "train": order[:n_train],
            "validation": order[n_train : n_train + held],
            "test": order[n_train + held :],
        }
        parts = {name: dataset.subset(idx, f"{dataset.provenance}/{name}") for name, idx in plan.indices.items()}

    elif kind == "train-test":
        if not 0.0 < test_fraction < 1.0:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        order = rng.permutation(n)
        n_test = int(round(n * test_fraction))
        plan.indices = {"train": order[: n - n_test], "test": order[n - n_test :]}
        parts = {name: dataset.subset(idx, f"{dataset.provenance}/{name}") for name, idx in plan.indices.items()}

    else:
        K = dataset.K
        if K < 2 or K % 2:
            raise ConfigurationError(f"class-5v5 needs an even number of classes, got K={K}")
        permutation = rng.permutation(K)
        plan.in_classes = sorted(int(k) for k in permutation[: K // 2])
        plan.out_classes = sorted(int(k) for k in permutation[K // 2 :])
        is_in = np.isin(dataset.labels, plan.in_classes)
        plan.indices = {"in": np.flatnonzero(is_in), "out": np.flatnonzero(~is_in)}
        relabel = {original: new for new, original in enumerate(plan.in_classes)}
        in_part = Dataset(
            dataset.images[is_in],
            np.array([relabel[int(t)] for t in dataset.labels[is_in]], dtype=np.int64),
            [dataset.class_names[k] for k in plan.in_classes],
            f"{dataset.provenance}/in",
        )
        parts = {"in": in_part, "out": dataset.subset(plan.indices["out"], f"{dataset.provenance}/out")}

    logger.debug("split %s (seed %d): %s", kind, seed, plan.sizes())
    return plan, parts
