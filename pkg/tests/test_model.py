import numpy as np
import pytest

from models.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from models.optimizers import Adam, SGDMomentum, make_optimizer
from models.surrogate_model import build_model, normalize_input_shape, predict
from models.trainer import TrainConfig, train
from services.dataset_service import make_synthetic
from utils.exceptions import (
    ChecksumError,
    CheckpointError,
    ConfigurationError,
    NotACheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
    UsageError,
)
from utils.patterns import gen_glyph_digits, gen_orthogonal


@pytest.mark.parametrize("arch", ["mlp", "small-conv"])
def test_forward_shapes(arch):
    model = build_model(arch, (8, 8), 16, 4, seed=0)
    outputs = model.forward(np.zeros((5, 8, 8)))
    assert outputs.z.shape == (5, 4)
    assert outputs.s.shape == (5, 16)
    assert np.all((outputs.s > 0) & (outputs.s < 1))


def test_predict_single_sample_drops_batch_axis(mlp_model):
    prediction = predict(mlp_model, np.zeros((8, 8)))
    assert prediction.y.shape == (4,)
    assert prediction.s.shape == (16,)
    assert prediction.y.sum() == pytest.approx(1.0)
    assert predict(mlp_model, np.zeros((3, 8, 8))).y.shape == (3, 4)


def test_predict_leaves_the_forward_cache_alone(mlp_model):
    x = np.random.default_rng(0).uniform(size=(2, 8, 8))
    cached = mlp_model.forward(x)
    predict(mlp_model, np.ones((4, 8, 8)))
    np.testing.assert_array_equal(mlp_model.network.activation(-1), cached.z)


def test_build_is_seeded():
    first = build_model("mlp", (8, 8), 16, 4, seed=9)
    second = build_model("mlp", (8, 8), 16, 4, seed=9)
    third = build_model("mlp", (8, 8), 16, 4, seed=10)
    np.testing.assert_array_equal(first.network.get_flat(), second.network.get_flat())
    assert not np.array_equal(first.network.get_flat(), third.network.get_flat())


@pytest.mark.parametrize(
    "args",
    [("mlp", (8, 8), 15, 4), ("mlp", (8, 8), 16, 1), ("resnet", (8, 8), 16, 4), ("mlp", (8,), 16, 4)],
)
def test_build_rejects_bad_configurations(args):
    with pytest.raises(ConfigurationError):
        build_model(*args, seed=0)


def test_input_shapes():
    assert normalize_input_shape((28, 28)) == (1, 28, 28)
    assert normalize_input_shape((3, 8, 8)) == (3, 8, 8)
    with pytest.raises(UsageError):
        build_model("mlp", (8, 8), 16, 4, seed=0).forward(np.zeros((2, 7, 7)))


def test_classifier_exposes_weight_rows(mlp_model):
    weight, bias = mlp_model.classifier
    assert weight.shape == (4, 16)
    assert bias.shape == (4,)


def test_training_reduces_loss(synthetic_data, orthogonal_patterns):
    model = build_model("mlp", (8, 8), 16, 4, seed=0)
    report = train(model, synthetic_data, orthogonal_patterns, TrainConfig(epochs=8, batch_size=16, learning_rate=3e-3))
    assert len(report.epochs) == 8
    assert report.epochs[-1].loss < report.epochs[0].loss
    assert report.epochs[-1].pixel_mse < report.epochs[0].pixel_mse
    assert report.final.accuracy >= report.epochs[0].accuracy
    assert report.to_dict()["alpha"] == 0.5


@pytest.mark.slow
def test_mlp_separates_clean_symbols(orthogonal_patterns):
    data = make_synthetic(4, 8, 50, 0.05, seed=1)
    model = build_model("mlp", (8, 8), 16, 4, seed=0)
    report = train(model, data, orthogonal_patterns, TrainConfig(epochs=20, batch_size=16, learning_rate=5e-3))
    assert report.final.accuracy >= 0.99
    predicted = predict(model, data.images).y.argmax(axis=1)
    assert np.array_equal(predicted, data.labels)


@pytest.mark.slow
def test_glyph_targets_are_reconstructed():
    data = make_synthetic(4, 8, 50, 0.1, seed=2)
    patterns = gen_glyph_digits(4, 8)
    model = build_model("mlp", (8, 8), patterns.m, 4, seed=0)
    report = train(model, data, patterns, TrainConfig(epochs=30, batch_size=16, learning_rate=3e-3))
    assert len(data) == 200
    assert report.final.accuracy >= 0.95
    assert report.final.pixel_mse <= 0.05


def test_training_is_deterministic(synthetic_data, orthogonal_patterns):
    blobs = []
    for _ in range(2):
        model = build_model("mlp", (8, 8), 16, 4, seed=2)
        train(model, synthetic_data, orthogonal_patterns, TrainConfig(epochs=2, seed=4))
        blobs.append(model.network.get_flat())
    np.testing.assert_array_equal(*blobs)


def test_zero_epochs_leave_the_model_untouched(synthetic_data, orthogonal_patterns, mlp_model):
    before = mlp_model.network.get_flat()
    report = train(mlp_model, synthetic_data, orthogonal_patterns, TrainConfig(epochs=0))
    assert report.final is None
    np.testing.assert_array_equal(mlp_model.network.get_flat(), before)


def test_training_calls_back_every_epoch(synthetic_data, orthogonal_patterns, mlp_model):
    seen = []
    train(mlp_model, synthetic_data, orthogonal_patterns, TrainConfig(epochs=3), on_epoch=lambda stats, _: seen.append(stats.epoch))
    assert seen == [1, 2, 3]


def test_training_rejects_mismatched_patterns(synthetic_data, mlp_model):
    with pytest.raises(UsageError):
        train(mlp_model, synthetic_data, gen_orthogonal(2, 4), TrainConfig(epochs=1))


def test_sgd_momentum_step():
    param = np.array([1.0])
    optimizer = SGDMomentum([param], learning_rate=0.1, momentum=0.5)
    optimizer.step([np.array([1.0])])
    optimizer.step([np.array([1.0])])
    # v1 = -0.1, v2 = 0.5 * -0.1 - 0.1
    assert param[0] == pytest.approx(1.0 - 0.1 - 0.15)


def test_adam_first_step_moves_by_the_learning_rate():
    param = np.array([0.0, 0.0])
    Adam([param], learning_rate=0.01).step([np.array([3.0, -0.5])])
    np.testing.assert_allclose(param, [-0.01, 0.01], rtol=1e-6)


def test_unknown_optimizer():
    with pytest.raises(ConfigurationError):
        make_optimizer("lbfgs", [], 0.1)


def test_checkpoint_round_trip(tmp_path, conv_model, orthogonal_patterns):
    path = save_checkpoint(conv_model, orthogonal_patterns, tmp_path / "model.ckpt", {"alpha": 0.5})
    loaded = load_checkpoint(path)
    assert loaded.metadata == {"alpha": 0.5}
    assert loaded.patterns == orthogonal_patterns
    x = np.random.default_rng(3).uniform(size=(4, 8, 8))
    np.testing.assert_array_equal(predict(loaded.model, x).y, predict(conv_model, x).y)
    assert encode_checkpoint(loaded.model, loaded.patterns, loaded.metadata) == path.read_bytes()


def test_checkpoint_errors(mlp_model, orthogonal_patterns):
    data = encode_checkpoint(mlp_model, orthogonal_patterns)
    with pytest.raises(NotACheckpointError):
        decode_checkpoint(b"NOTACKPT" + data[8:])
    with pytest.raises(UnsupportedVersionError):
        decode_checkpoint(MAGIC + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:-100])
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:14])
    corrupted = bytearray(data)
    corrupted[-20] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(corrupted))
    with pytest.raises(ChecksumError):
        decode_checkpoint(data + b"\x00")


def test_checkpoint_refuses_foreign_patterns(mlp_model):
    with pytest.raises(CheckpointError):
        encode_checkpoint(mlp_model, gen_orthogonal(2, 4))
