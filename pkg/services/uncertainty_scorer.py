"""Uncertainty scores: pattern reconstruction distance and softmax-layer baselines."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import entr, softmax

from config import settings
from models.surrogate_model import SurrogateModel, predict
from utils.exceptions import UsageError
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

CUSP_METHODS = ("cusp-mse", "cusp-bce")
SOFTMAX_METHODS = ("entropy", "largest", "functional", "random", "oracle")
METHODS = CUSP_METHODS + SOFTMAX_METHODS + ("geometrical", "odin", "detector")
ORACLE_MODES = ("correctness", "domain")
DOMAIN_FLAGS = ("in", "out")
PROB_FLOOR = 1e-12
DEGENERATE_NORM = 1e-12


@dataclass
class ScoreRecord:
    """One sample scored by one method; higher scores mean more uncertain."""

    method: str
    score: float
    predicted_class: int
    true_class: Optional[int] = None
    domain_flag: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown score method '{self.method}'")
        if not math.isfinite(self.score):
            raise UsageError(f"{self.method} score is not finite")
        if self.domain_flag is not None and self.domain_flag not in DOMAIN_FLAGS:
            raise UsageError(f"domain flag must be one of {DOMAIN_FLAGS}")

    def to_dict(self) -> Dict:
        return asdict(self)


def _pattern_bits(pattern) -> np.ndarray:
    return np.asarray(getattr(pattern, "bits", pattern), dtype=np.float64).ravel()


def cusp_scores(s: np.ndarray, targets: np.ndarray, delta: str) -> np.ndarray:
    """Row-wise :func:`cusp_score` for surrogates ``(N, m)`` and targets ``(N, m)``."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if s.shape != targets.shape:
        raise UsageError(f"surrogate shape {s.shape} != pattern shape {targets.shape}")
    if delta == "mse":
        return np.mean((s - targets) ** 2, axis=1)
    if delta == "bce":
        log_s = np.log(np.maximum(s, PROB_FLOOR))
        log_not_s = np.log(np.maximum(1.0 - s, PROB_FLOOR))
        return -np.mean(targets * log_s + (1.0 - targets) * log_not_s, axis=1)
    raise UsageError(f"unknown distance '{delta}', expected mse or bce")


def cusp_score(s, pattern, delta: str = "mse") -> float:
    """
    Distance between a surrogate and the pattern of the predicted class.

    Args:
        s: Surrogate activations, length m
        pattern: Pattern (or bit array) of the predicted class
        delta: ``mse`` or ``bce``; both average over pixels

    Returns:
        Non-negative score; mse lies in [0, 1]
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    bits = _pattern_bits(pattern)
    if s.shape != bits.shape:
        raise UsageError(f"surrogate has {s.size} values, pattern has {bits.size}")
    return float(cusp_scores(s[None], bits[None], delta)[0])


def softmax_baselines(
    y: np.ndarray,
    method: str,
    rng: Optional[np.random.Generator] = None,
    truth=None,
    domain=None,
) -> np.ndarray:
    """Row-wise :func:`softmax_baseline` over probabilities ``(N, K)``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if method == "entropy":
        return entr(y).sum(axis=1)
    if method == "largest":
        return 1.0 - y.max(axis=1)
    if method == "functional":
        top = np.sort(y, axis=1)[:, -2:]
        return 1.0 - (top[:, 1] - top[:, 0])
    if method == "random":
        if rng is None:
            raise UsageError("the random baseline needs a generator")
        return rng.random(len(y))
    if method == "oracle":
        if truth is not None:
            return (y.argmax(axis=1) != np.atleast_1d(truth)).astype(np.float64)
        if domain is not None:
            return (np.atleast_1d(np.asarray(domain)) == "out").astype(np.float64)
        raise UsageError("the oracle baseline needs ground-truth labels or domain flags")
    raise UsageError(f"unknown softmax baseline '{method}'")


def softmax_baseline(y, method: str, rng: Optional[np.random.Generator] = None, truth=None, domain=None) -> float:
    """
    Uncertainty read off a probability vector.

    entropy is -sum(y ln y); largest is 1 - max(y); functional is
    1 - (top1 - top2); random draws from ``rng``; oracle is 0 when the
    prediction is right (``truth``) or the sample is in-domain
    (``domain == "in"``) and 1 otherwise.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise UsageError("softmax_baseline expects one probability vector")
    if abs(y.sum() - 1.0) > 1e-6 or y.min() < 0:
        raise UsageError("y is not a probability vector")
    return float(softmax_baselines(y, method, rng, truth, domain)[0])


def geometrical_margins(z: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Row-wise :func:`geometrical_margin` for logits ``(N, K)``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    weight = np.asarray(weight, dtype=np.float64)
    if z.shape[1] < 2:
        raise UsageError("the geometrical margin needs K >= 2")
    if weight.shape[0] != z.shape[1]:
        raise UsageError(f"{weight.shape[0]} weight rows for {z.shape[1]} logits")
    order = np.argsort(-z, axis=1, kind="stable")
    first, second = order[:, 0], order[:, 1]
    rows = np.arange(len(z))
    gap = z[rows, first] - z[rows, second]
    norm = np.linalg.norm(weight[first] - weight[second], axis=1)
    degenerate = norm < DEGENERATE_NORM
    margin = np.divide(gap, norm, out=np.zeros_like(gap), where=~degenerate)
    return np.where(degenerate, 1.0, 1.0 / (1.0 + margin))


def geometrical_margin(z, weight, bias=None) -> float:
    """
    Distance of the surrogate to the decision boundary between the two top classes.

    Args:
        z: Logits ``W s + b`` of one sample
        weight: Classifier weight rows ``(K, m)``
        bias: Classifier biases (already folded into ``z``)

    Returns:
        ``1 / (1 + margin)``; 1 when the two weight rows coincide
    """
    return float(geometrical_margins(np.asarray(z)[None], weight)[0])


def odin_scores(model: SurrogateModel, x, temperature: float = 1000.0, perturb_eps: float = 0.0014) -> np.ndarray:
    """
    Temperature-scaled max-softmax after a small input step that raises it.

    Returns ``1 - max softmax(z(x_tilde) / T)`` per sample. The model's
    forward cache is overwritten when ``perturb_eps > 0``.
    """
    if temperature <= 0 or perturb_eps < 0:
        raise UsageError("ODIN needs temperature > 0 and perturb_eps >= 0")
    x = model.batched(x)
    if perturb_eps > 0:

        def loss(outputs):
            scaled = outputs.z / temperature
            probs = softmax(scaled, axis=1)
            predicted = probs.argmax(axis=1)
            rows = np.arange(len(predicted))
            value = -np.log(np.maximum(probs[rows, predicted], PROB_FLOOR)).mean()
            dz = probs.copy()
            dz[rows, predicted] -= 1.0
            return value, dz / (temperature * len(predicted)), None

        _, grads = model.value_and_grad(x, loss)
        x = x - perturb_eps * np.sign(grads.input)
    z = model.forward(x, keep_cache=False).z
    return 1.0 - softmax(z / temperature, axis=1).max(axis=1)


def odin_score(model: SurrogateModel, x, temperature: float = 1000.0, perturb_eps: float = 0.0014) -> float:
    """ODIN uncertainty of a single sample."""
    return float(odin_scores(model, x, temperature, perturb_eps)[0])


class UncertaintyScorer:
    """Score batches of images with any subset of :data:`METHODS`."""

    def __init__(
        self,
        model: SurrogateModel,
        patterns,
        methods: Sequence[str],
        seed: int = 0,
        temperature: float = 1000.0,
        perturb_eps: float = 0.0014,
        oracle_mode: str = "correctness",
        detector=None,
        workers: Optional[int] = None,
        chunk_size: Optional[int] = None,
    ):
        """
        Initialize the scorer.

        Args:
            model: Trained SurrogateModel (read-only except for ODIN copies)
            patterns: PatternSet of the model
            methods: Method tags to compute
            seed: Master seed; the random baseline derives its stream from it
            temperature: ODIN temperature
            perturb_eps: ODIN input step
            oracle_mode: ``correctness`` or ``domain``
            detector: Trained DetectorModel, required for ``detector``
            workers: Thread count (defaults to ``settings.score_workers``)
            chunk_size: Samples per chunk (defaults to ``settings.score_chunk_size``)
        """
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise UsageError(f"unknown score methods {unknown}; choose from {METHODS}")
        if oracle_mode not in ORACLE_MODES:
            raise UsageError(f"oracle mode must be one of {ORACLE_MODES}")
        if "detector" in methods and detector is None:
            raise UsageError("the detector method needs a trained detector")
        if patterns.K != model.K or patterns.m != model.m:
            raise UsageError("patterns do not match the model")
        self.model = model
        self.patterns = patterns
        self.methods = list(methods)
        self.seed = seed
        self.temperature = temperature
        self.perturb_eps = perturb_eps
        self.oracle_mode = oracle_mode
        self.detector = detector
        self.workers = max(1, workers or settings.score_workers)
        self.chunk_size = max(1, chunk_size or settings.score_chunk_size)

    def _score_chunk(self, images: np.ndarray, truth, domain, random_draws) -> Dict[str, np.ndarray]:
        prediction = predict(self.model, images)
        y, s, z = np.atleast_2d(prediction.y), np.atleast_2d(prediction.s), np.atleast_2d(prediction.z)
        predicted = y.argmax(axis=1)
        targets = self.patterns.matrix[predicted]
        columns: Dict[str, np.ndarray] = {"predicted_class": predicted}
        mse = None
        for method in self.methods:
            if method in CUSP_METHODS:
                columns[method] = cusp_scores(s, targets, method.split("-")[1])
            elif method == "random":
                columns[method] = random_draws
            elif method == "oracle":
                if self.oracle_mode == "correctness":
                    columns[method] = softmax_baselines(y, "oracle", truth=truth)
                else:
                    columns[method] = softmax_baselines(y, "oracle", domain=domain)
            elif method in SOFTMAX_METHODS:
                columns[method] = softmax_baselines(y, method)
            elif method == "geometrical":
                weight, _ = self.model.classifier
                columns[method] = geometrical_margins(z, weight)
            elif method == "odin":
                columns[method] = odin_scores(self.model.copy(), images, self.temperature, self.perturb_eps)
            elif method == "detector":
                if mse is None:
                    mse = cusp_scores(s, targets, "mse")
                columns[method] = self.detector.uncertainty(s, targets, mse)
        return columns

    def score(self, images, truth=None, domain=None) -> pd.DataFrame:
        """
        Score every image with every configured method.

        Args:
            images: Batch ``(N, H, W)``
            truth: True labels (needed for the correctness oracle)
            domain: ``"in"``/``"out"`` flags (needed for the domain oracle)

        Returns:
            Long-format frame with columns ``sample, method, score,
            predicted_class, true_class, domain_flag``
        """
        images = np.asarray(images, dtype=np.float64)
        n = len(images)
        truth = None if truth is None else np.asarray(truth, dtype=np.int64)
        domain = None if domain is None else np.asarray(domain, dtype=object)
        if "oracle" in self.methods:
            if self.oracle_mode == "correctness" and truth is None:
                raise UsageError("the correctness oracle needs ground-truth labels")
            if self.oracle_mode == "domain" and domain is None:
                raise UsageError("the domain oracle needs in/out flags")
        random_draws = make_rng(self.seed, "random-baseline").random(n)

        bounds = [(start, min(start + self.chunk_size, n)) for start in range(0, n, self.chunk_size)]

        def run(bound):
            lo, hi = bound
            return self._score_chunk(
                images[lo:hi],
                None if truth is None else truth[lo:hi],
                None if domain is None else domain[lo:hi],
                random_draws[lo:hi],
            )

        if self.workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                chunks = list(pool.map(run, bounds))
        else:
            chunks = [run(bound) for bound in bounds]
        logger.debug("scored %d samples in %d chunks with %s", n, len(bounds), self.methods)

        predicted = np.concatenate([c["predicted_class"] for c in chunks]) if chunks else np.zeros(0, np.int64)
        frames = []
        for method in self.methods:
            scores = np.concatenate([c[method] for c in chunks]) if chunks else np.zeros(0)
            if not np.all(np.isfinite(scores)):
                raise UsageError(f"{method} produced non-finite scores")
            frames.append(
                pd.DataFrame(
                    {
                        "sample": np.arange(n),
                        "method": method,
                        "score": scores,
                        "predicted_class": predicted,
                        "true_class": pd.array(truth, dtype="Int64") if truth is not None else pd.NA,
                        "domain_flag": domain if domain is not None else None,
                    }
                )
            )
        if not frames:
            return pd.DataFrame(columns=["sample", "method", "score", "predicted_class", "true_class", "domain_flag"])
        return pd.concat(frames, ignore_index=True)


def records_from_frame(frame: pd.DataFrame) -> List[ScoreRecord]:
    """Typed records for a frame produced by :meth:`UncertaintyScorer.score`."""
    records = []
    for row in frame.itertuples(index=False):
        true_class = None if pd.isna(row.true_class) else int(row.true_class)
        domain = None if row.domain_flag is None or pd.isna(row.domain_flag) else str(row.domain_flag)
        records.append(ScoreRecord(row.method, float(row.score), int(row.predicted_class), true_class, domain))
    return records
