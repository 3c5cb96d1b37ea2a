import numpy as np
import pytest
from pydantic import ValidationError

from services.detector import (
    DetectorConfig,
    DetectorModel,
    DetectorRecords,
    build_records,
    detector_score,
    train_detector,
)
from services.uncertainty_scorer import UncertaintyScorer
from utils.exceptions import ProtocolError, UsageError
from utils.metrics import auc
from utils.objective import focal_bce_logits
from utils.patterns import gen_orthogonal


def _separable_records(n: int = 120, seed: int = 0) -> DetectorRecords:
    """Correct samples reproduce their pattern; incorrect ones are noise."""
    rng = np.random.default_rng(seed)
    patterns = gen_orthogonal(4, 4).matrix
    classes = rng.integers(0, 4, size=n)
    labels = (np.arange(n) % 2).astype(np.float64)
    targets = patterns[classes]
    s = np.where(labels[:, None] == 1, 0.9 * targets + 0.05, rng.uniform(size=(n, 16)))
    mse = np.mean((s - targets) ** 2, axis=1)
    return DetectorRecords(s=s, targets=targets, mse=mse, labels=labels)


def test_degenerate_labels_are_refused():
    records = _separable_records()
    records.labels[:] = 1.0
    with pytest.raises(ProtocolError, match="degenerate labels"):
        train_detector(records, DetectorConfig(epochs=1), seed=0)


def test_detector_separates_clean_reconstructions():
    train_records = _separable_records(seed=1)
    test_records = _separable_records(seed=2)
    detector = train_detector(train_records, DetectorConfig(epochs=15, batch_size=16), seed=3)
    uncertainty = detector.uncertainty(test_records.s, test_records.targets, test_records.mse)
    assert auc(uncertainty, 1 - test_records.labels) >= 0.95


def test_detector_output_is_a_probability_complement():
    records = _separable_records(n=10)
    detector = DetectorModel.build(4, (8, 16), seed=0)
    probability = detector.probability_correct(records.s, records.targets, records.mse)
    uncertainty = detector.uncertainty(records.s, records.targets, records.mse)
    assert np.all((probability > 0) & (probability < 1))
    np.testing.assert_allclose(probability + uncertainty, 1.0)
    single = detector_score(detector, records.s[0], records.targets[0], records.mse[0])
    assert single == pytest.approx(uncertainty[0])


def test_inference_pass_keeps_the_training_cache():
    records = _separable_records(n=12)
    detector = DetectorModel.build(4, (8, 16), seed=0)
    with pytest.raises(UsageError, match="no forward cache"):
        detector.backward(np.ones(6))
    detector.logits(records.s[:6], records.targets[:6], records.mse[:6], keep_cache=True)
    expected = detector.backward(np.ones(6))
    detector.uncertainty(records.s[6:], records.targets[6:], records.mse[6:])
    for got, want in zip(detector.backward(np.ones(6)), expected):
        np.testing.assert_array_equal(got, want)


def test_detector_training_is_seeded():
    records = _separable_records(n=40)
    cfg = DetectorConfig(epochs=2)
    first = train_detector(records, cfg, seed=5)
    second = train_detector(records, cfg, seed=5)
    np.testing.assert_array_equal(
        np.concatenate([p.ravel() for p in first.parameters()]),
        np.concatenate([p.ravel() for p in second.parameters()]),
    )


def test_detector_input_validation():
    detector = DetectorModel.build(4, (8, 16), seed=0)
    with pytest.raises(UsageError):
        detector.uncertainty(np.zeros((2, 16)), np.zeros((2, 9)), np.zeros(2))
    with pytest.raises(UsageError):
        detector.uncertainty(np.zeros((2, 16)), np.zeros((2, 16)), np.zeros(3))


def test_detector_gradients_match_central_differences():
    records = _separable_records(n=6)
    detector = DetectorModel.build(4, (2, 3), seed=1)

    def loss():
        logits = detector.logits(records.s, records.targets, records.mse, keep_cache=True)
        return focal_bce_logits(logits, records.labels, 2.0)

    _, dlogits = loss()
    grads = detector.backward(dlogits)
    step = 1e-6
    for param, grad in zip(detector.parameters(), grads):
        flat, flat_grad = param.reshape(-1), grad.reshape(-1)
        for index in range(0, flat.size, max(1, flat.size // 5)):
            original = flat[index]
            flat[index] = original + step
            plus, _ = loss()
            flat[index] = original - step
            minus, _ = loss()
            flat[index] = original
            assert flat_grad[index] == pytest.approx((plus - minus) / (2 * step), rel=1e-4, abs=1e-8)


def test_build_records_labels_correctness(mlp_model, orthogonal_patterns):
    images = np.random.default_rng(0).uniform(size=(6, 8, 8))
    predicted = UncertaintyScorer(mlp_model, orthogonal_patterns, ["largest"]).score(images)["predicted_class"]
    truth = predicted.to_numpy().copy()
    truth[:2] = (truth[:2] + 1) % 4
    records = build_records(mlp_model, orthogonal_patterns, images, truth)
    np.testing.assert_array_equal(records.labels, [0, 0, 1, 1, 1, 1])
    assert records.counts() == {"correct": 4, "incorrect": 2}
    np.testing.assert_array_equal(records.targets, orthogonal_patterns.matrix[predicted.to_numpy()])


def test_detector_config_validation():
    with pytest.raises(ValidationError):
        DetectorConfig(gamma=-1.0)
    with pytest.raises(ValidationError):
        DetectorConfig(epochs=0)
