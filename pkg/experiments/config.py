"""Experiment documents: JSON files validated with pydantic."""
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, FilePath, DirectoryPath, model_validator

from config import settings
from models.surrogate_model import ARCHITECTURES
from models.trainer import TrainConfig
from services.dataset_service import Dataset, load_idx, make_synthetic
from services.detector import DetectorConfig
from services.uncertainty_scorer import METHODS, ORACLE_MODES
from utils.exceptions import ConfigurationError
from utils.file_io import PathLike
from utils.seeding import derive_seed

EXPERIMENTS = (
    "train",
    "eval-ood",
    "eval-flip",
    "eval-adv",
    "eval-detector",
    "dump-patterns",
    "eval-corrupt",
    "patterns",
)
_PATH_KEYS = ("images", "labels", "checkpoint", "plain_checkpoint", "directory")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSpec(_Strict):
    """An IDX file pair or a synthetic symbol dataset."""

    source: Literal["idx", "synthetic"] = "synthetic"
    images: Optional[FilePath] = None
    labels: Optional[FilePath] = None
    classes: int = Field(4, ge=2)
    side: int = Field(16, ge=4)
    n_per_class: int = Field(100, ge=1)
    noise_sigma: float = Field(0.05, ge=0.0)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    limit: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_files(self):
        if self.source == "idx" and (self.images is None or self.labels is None):
            raise ValueError("idx datasets need both 'images' and 'labels' paths")
        return self

    def load(self, master_seed: int, role: str) -> Dataset:
        """Load the full dataset; synthetic sets default to a seed derived from ``role``."""
        if self.source == "idx":
            return load_idx(self.images, self.labels)
        seed = self.seed if self.seed is not None else derive_seed(master_seed, "dataset", role)
        return make_synthetic(self.classes, self.side, self.n_per_class, self.noise_sigma, seed)


class PatternSpec(_Strict):
    kind: Literal["orthogonal", "glyph", "symbol", "custom"] = "symbol"
    side: int = Field(16, ge=2)
    classes: Optional[int] = Field(None, ge=2)
    min_distance: Optional[int] = Field(None, ge=0)
    directory: Optional[DirectoryPath] = None

    @property
    def m(self) -> int:
        return self.side * self.side


class FlipConfig(_Strict):
    """Label flips for the aleatoric experiment; seeds derive from the master seed."""

    pairs: List[Tuple[int, int]] = Field(default_factory=lambda: [(1, 7), (4, 9), (3, 8)])
    rate: float = Field(0.3, ge=0.0, le=1.0)
    control_rate: float = Field(0.3, gt=0.0, le=1.0)


class OdinConfig(_Strict):
    temperature: float = Field(1000.0, gt=0.0)
    perturb_eps: float = Field(0.0014, ge=0.0)


class CorruptionConfig(_Strict):
    rotations: List[float] = Field(default_factory=lambda: [0.0, 45.0, 90.0, 135.0, 180.0])
    noise_sigmas: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    erase_counts: List[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    erase_fraction: float = Field(0.25, gt=0.0, lt=1.0)


class ExperimentConfig(_Strict):
    """One experiment; every stochastic component derives its seed from ``seed``."""

    experiment: Optional[Literal[EXPERIMENTS]] = None
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    output_dir: Optional[str] = None

    dataset: Optional[DatasetSpec] = None
    test_dataset: Optional[DatasetSpec] = None
    out_dataset: Optional[DatasetSpec] = None
    ood_split: Literal["none", "class-5v5", "random-halves"] = "none"
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    repeats: int = Field(1, ge=1)

    architecture: Literal[ARCHITECTURES] = "small-conv"
    patterns: PatternSpec = Field(default_factory=PatternSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    dump_every: int = Field(1, ge=0)

    checkpoint: Optional[FilePath] = None
    plain_checkpoint: Optional[FilePath] = None

    methods: List[str] = Field(default_factory=lambda: ["cusp-mse", "cusp-bce", "entropy", "largest"])
    oracle_mode: Literal[ORACLE_MODES] = "domain"
    odin: OdinConfig = Field(default_factory=OdinConfig)
    flip: FlipConfig = Field(default_factory=FlipConfig)
    epsilons: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1])
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)

    @model_validator(mode="after")
    def _check_methods(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown score methods {unknown}")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be non-negative")
        if "detector" in self.methods and self.experiment in ("eval-ood", "eval-flip", "eval-corrupt"):
            raise ValueError(f"the detector score is only available in eval-detector, not {self.experiment}")
        return self

    @property
    def master_seed(self) -> int:
        return self.seed if self.seed is not None else settings.default_seed

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir or settings.output_dir)

    def require(self, *fields: str):
        """Raise ConfigurationError naming the first missing field."""
        for name in fields:
            if getattr(self, name) is None:
                raise ConfigurationError(f"'{name}' is required for {self.experiment or 'this experiment'}")

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _resolve_paths(node, base: Path):
    if isinstance(node, dict):
        for key, value in node.items():
            if key in _PATH_KEYS and isinstance(value, str) and not Path(value).is_absolute():
                node[key] = str(base / value)
            else:
                _resolve_paths(value, base)
    elif isinstance(node, list):
        for item in node:
            _resolve_paths(item, base)


def load_config(
    path: Optional[PathLike],
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """
    Read and validate an experiment document.

    Relative file paths are resolved against the document's directory. CLI
    values for ``seed`` and ``output_dir`` override the document.

    Raises:
        ConfigurationError: Unreadable JSON or a kind mismatch
        pydantic.ValidationError: Schema violations
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a JSON object")
        _resolve_paths(data, path.parent)
    if experiment is not None:
        declared = data.get("experiment")
        if declared is not None and declared != experiment:
            raise ConfigurationError(f"config describes '{declared}' but '{experiment}' was requested")
        data["experiment"] = experiment
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    return ExperimentConfig.model_validate(data)
