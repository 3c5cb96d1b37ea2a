import numpy as np
import pytest
from pydantic import ValidationError

from models.surrogate_model import build_model
from utils.exceptions import ConfigurationError, UsageError
from utils.objective import combined
from utils.perturb import AttackConfig, FlipSpec, add_noise, fgm_attack, flip_labels, random_erase, rotate


def test_fgm_with_zero_epsilon_returns_a_copy(mlp_model, orthogonal_patterns):
    x = np.random.default_rng(0).uniform(size=(3, 8, 8))
    attacked = fgm_attack(mlp_model, x, [0, 1, 2], orthogonal_patterns, AttackConfig(epsilon=0.0))
    np.testing.assert_array_equal(attacked, x)
    assert attacked is not x


def test_fgm_moves_every_pixel_by_epsilon_or_clamps(mlp_model, orthogonal_patterns):
    x = np.random.default_rng(1).uniform(0.2, 0.8, size=(4, 8, 8))
    attacked = fgm_attack(mlp_model, x, [0, 1, 2, 3], orthogonal_patterns, AttackConfig(epsilon=0.1))
    step = np.abs(attacked - x)
    assert np.all(np.isclose(step, 0.1) | np.isclose(step, 0.0))
    assert attacked.min() >= 0.0 and attacked.max() <= 1.0


def test_fgm_increases_the_loss(mlp_model, orthogonal_patterns):
    x = np.random.default_rng(2).uniform(0.2, 0.8, size=(4, 8, 8))
    labels = np.array([0, 1, 2, 3])

    def loss_of(images):
        out = mlp_model.forward(images, keep_cache=False)
        return combined(out.z, out.s_logits, labels, orthogonal_patterns, 0.5)[0].total

    attacked = fgm_attack(mlp_model, x, labels, orthogonal_patterns, AttackConfig(epsilon=0.01))
    assert loss_of(attacked) > loss_of(x)


def test_fgm_with_zero_gradient_leaves_input_unchanged(orthogonal_patterns):
    model = build_model("mlp", (8, 8), 16, 4, seed=0)
    for param in model.parameters():
        param[...] = 0.0
    x = np.full((2, 8, 8), 0.5)
    attacked = fgm_attack(model, x, [0, 1], orthogonal_patterns, AttackConfig(epsilon=0.3))
    np.testing.assert_array_equal(attacked, x)


def test_fgm_clamps_to_the_valid_range(mlp_model, orthogonal_patterns):
    x = np.zeros((2, 8, 8))
    attacked = fgm_attack(mlp_model, x, [0, 1], orthogonal_patterns, AttackConfig(epsilon=5.0))
    assert set(np.unique(attacked)) <= {0.0, 1.0}


def test_fgm_rejects_out_of_range_inputs(mlp_model, orthogonal_patterns):
    with pytest.raises(UsageError):
        fgm_attack(mlp_model, np.full((1, 8, 8), 2.0), [0], orthogonal_patterns, AttackConfig())


def test_attack_config_validation():
    with pytest.raises(ValidationError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ValidationError):
        AttackConfig(lo=1.0, hi=1.0)


def test_noise_is_seeded_and_clamped():
    x = np.full((2, 5, 5), 0.5)
    first = add_noise(x, 0.3, seed=4)
    np.testing.assert_array_equal(first, add_noise(x, 0.3, seed=4))
    assert not np.array_equal(first, add_noise(x, 0.3, seed=5))
    assert first.min() >= 0.0 and first.max() <= 1.0
    np.testing.assert_array_equal(add_noise(x, 0.0, seed=4), x)
    with pytest.raises(ConfigurationError):
        add_noise(x, -1.0, seed=0)


def test_random_erase_patches():
    image = np.ones((8, 8))
    erased = random_erase(image, 0.25, 1, seed=0)
    zero = np.argwhere(erased == 0.0)
    assert len(zero) == 4
    assert np.ptp(zero[:, 0]) == 1 and np.ptp(zero[:, 1]) == 1
    np.testing.assert_array_equal(image, np.ones((8, 8)))


def test_random_erase_batch_and_zero_count():
    batch = np.ones((3, 8, 8))
    erased = random_erase(batch, 0.5, 2, seed=1)
    assert erased.shape == batch.shape
    assert np.all((erased == 0).sum(axis=(1, 2)) >= 16)
    np.testing.assert_array_equal(random_erase(batch, 0.5, 0, seed=1), batch)


def test_random_erase_patch_must_fit():
    with pytest.raises(ConfigurationError):
        random_erase(np.ones((4, 4)), 1.5, 1, seed=0)
    with pytest.raises(ConfigurationError):
        random_erase(np.ones((4, 4)), 0.5, -1, seed=0)


def test_rotation_by_zero_and_full_turn_is_identity():
    image = np.random.default_rng(0).uniform(size=(7, 7))
    np.testing.assert_array_equal(rotate(image, 0.0), image)
    np.testing.assert_array_equal(rotate(image, 360.0), image)


def test_two_half_turns_restore_the_image():
    image = np.random.default_rng(1).uniform(size=(6, 6))
    np.testing.assert_allclose(rotate(rotate(image, 180.0), 180.0), image, atol=1e-9)
    np.testing.assert_allclose(rotate(image, 180.0), image[::-1, ::-1], atol=1e-9)


def test_quarter_turn_permutes_pixels():
    image = np.arange(16.0).reshape(4, 4) / 16.0
    turned = rotate(image, 90.0)
    np.testing.assert_allclose(np.sort(turned.ravel()), np.sort(image.ravel()), atol=1e-9)


def test_rotation_fills_uncovered_pixels_with_lo():
    image = np.ones((9, 9))
    turned = rotate(image, 45.0, lo=0.0)
    assert turned[0, 0] == 0.0
    assert turned[4, 4] == pytest.approx(1.0)


def test_rotation_range():
    with pytest.raises(ConfigurationError):
        rotate(np.zeros((4, 4)), 400.0)
    with pytest.raises(ConfigurationError):
        rotate(np.zeros((4, 4)), -10.0)


def test_flip_exact_count_per_pair():
    labels = np.array([1] * 100 + [7] * 50 + [4] * 10)
    flipped, mask = flip_labels(labels, FlipSpec(pairs=[(1, 7), (4, 9)], rate=0.3, seed=2))
    assert mask[:100].sum() == 30
    assert mask[150:].sum() == 3
    assert not mask[100:150].any()
    assert np.all(flipped[:100][mask[:100]] == 7)
    assert np.all(flipped[150:][mask[150:]] == 9)


def test_flip_rounds_halves_up():
    labels = np.array([3] * 5)
    _, mask = flip_labels(labels, FlipSpec(pairs=[(3, 8)], rate=0.5, seed=0))
    assert mask.sum() == 3


def test_flip_rate_one_and_zero():
    labels = np.array([1, 1, 7, 2, 1])
    flipped, mask = flip_labels(labels, FlipSpec(pairs=[(1, 7)], rate=1.0, seed=0))
    np.testing.assert_array_equal(flipped, [7, 7, 7, 2, 7])
    unchanged, none = flip_labels(labels, FlipSpec(pairs=[(1, 7)], rate=0.0, seed=0))
    np.testing.assert_array_equal(unchanged, labels)
    assert not none.any()


def test_flip_pairs_do_not_chain():
    labels = np.array([1] * 10)
    flipped, _ = flip_labels(labels, FlipSpec(pairs=[(1, 7), (7, 9)], rate=1.0, seed=0))
    np.testing.assert_array_equal(flipped, [7] * 10)


def test_flip_is_seeded():
    labels = np.repeat(np.arange(10), 20)
    spec = FlipSpec(rate=0.3, seed=11)
    np.testing.assert_array_equal(flip_labels(labels, spec)[1], flip_labels(labels, spec)[1])


def test_flip_spec_validation():
    with pytest.raises(ValidationError):
        FlipSpec(pairs=[(2, 2)])
    with pytest.raises(ValidationError):
        FlipSpec(rate=1.5)
    with pytest.raises(ConfigurationError):
        flip_labels(np.array([0, 1]), FlipSpec(pairs=[(1, 7)]), num_classes=4)
