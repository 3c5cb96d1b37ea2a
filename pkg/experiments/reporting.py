"""Report, table, ROC and timing writers for experiment runs."""
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from utils.file_io import atomic_write_json, atomic_write_text
from utils.metrics import auc, minmax_normalize, roc_100

logger = logging.getLogger(__name__)

# scores already confined to [0, 1]; the rest are min-max normalized before the ROC grid
UNIT_RANGE_METHODS = ("cusp-mse", "largest", "functional", "geometrical", "odin", "random", "oracle", "detector")


class Timings:
    """Wall-clock durations of named phases, written next to the report."""

    def __init__(self):
        self.phases: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - start

    def write(self, out_dir: Path) -> Path:
        return atomic_write_json(Path(out_dir) / "timings.json", {k: round(v, 3) for k, v in self.phases.items()})


def roc_scores(method: str, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return scores if method in UNIT_RANGE_METHODS else minmax_normalize(scores)


def evaluate_method(method: str, scores, positives, out_dir: Optional[Path], prefix: str = "roc") -> Dict:
    """AUC of ``scores`` against binary ``positives`` and, with ``out_dir``, its ROC CSV."""
    result = {"auc": auc(scores, positives)}
    if out_dir is not None:
        path = Path(out_dir) / f"{prefix}_{method}.csv"
        roc_100(roc_scores(method, scores), positives).to_csv(path)
        result["roc_file"] = path.name
    return result


def write_table(out_dir: Path, name: str, frame: pd.DataFrame) -> str:
    """Write ``frame`` as CSV; returns the file name for the report."""
    path = Path(out_dir) / name
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n", float_format="%.10g"))
    return path.name


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_report(out_dir: Path, experiment: str, config: Dict, results: Dict, files: Optional[Dict] = None) -> Path:
    """
    Write ``report.json``: the config echo, results and referenced files.

    Numpy scalars and arrays are converted to plain JSON values; keys are
    sorted so equal runs give equal bytes.
    """
    report = {
        "experiment": experiment,
        "config": config,
        "results": _plain(results),
        "files": _plain(files or {}),
    }
    path = atomic_write_json(Path(out_dir) / "report.json", report)
    logger.info("report written to %s", path)
    return path
