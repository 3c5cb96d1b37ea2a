import numpy as np
import pytest

from engine import layers as kernels
from engine.gradcheck import finite_diff_check
from engine.layers import layer_forward
from engine.network import Sequential, glorot_uniform
from engine.tensor import LayerSpec, as_tensor, chain
from utils.exceptions import ConfigurationError, NumericError, UsageError
from utils.objective import combined


def _network(input_shape, layers, seed=0):
    specs = chain(input_shape, layers)
    return Sequential(specs, glorot_uniform(specs, np.random.default_rng(seed)))


def _projection_loss(cotangent):
    def loss(out):
        return float(np.sum(out * cotangent)), cotangent

    return loss


@pytest.mark.parametrize(
    "input_shape,layers",
    [
        ((7,), [{"kind": "dense", "out_features": 5}]),
        ((4,), [{"kind": "dense", "out_features": 6}, {"kind": "relu"}]),
        ((4,), [{"kind": "dense", "out_features": 6}, {"kind": "sigmoid"}]),
        ((2, 5, 5), [{"kind": "conv2d", "out_channels": 3}]),
        ((2, 6, 6), [{"kind": "conv2d", "out_channels": 3}, {"kind": "maxpool2d"}, {"kind": "flatten"}]),
        ((1, 5, 5), [{"kind": "maxpool2d"}]),
        (
            (1, 6, 6),
            [
                {"kind": "conv2d", "out_channels": 2},
                {"kind": "flatten"},
                {"kind": "dense", "out_features": 3},
                {"kind": "sigmoid"},
            ],
        ),
    ],
)
def test_layer_gradients_match_central_differences(input_shape, layers):
    network = _network(input_shape, layers)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3,) + input_shape)
    cotangent = rng.normal(size=(3,) + network.output_shape)
    assert finite_diff_check(network, x, _projection_loss(cotangent)) < 1e-4


@pytest.mark.parametrize("alpha", [0.0, 0.5, 2.0])
def test_surrogate_model_gradients_under_the_combined_loss(mlp_model, orthogonal_patterns, alpha):
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(3, 8, 8))
    labels = np.array([0, 2, 3])

    def loss(outputs):
        value, dz, ds = combined(outputs.z, outputs.s_logits, labels, orthogonal_patterns, alpha)
        return value.total, dz, ds

    assert finite_diff_check(mlp_model, x, loss, max_entries=40) < 1e-4


def test_conv_model_gradients(conv_model, orthogonal_patterns):
    x = np.random.default_rng(1).uniform(size=(2, 8, 8))
    labels = np.array([1, 3])

    def loss(outputs):
        value, dz, ds = combined(outputs.z, outputs.s_logits, labels, orthogonal_patterns, 0.5)
        return value.total, dz, ds

    assert finite_diff_check(conv_model, x, loss, max_entries=25) < 1e-4


def test_dense_forward_values():
    spec = LayerSpec("dense", (3,), out_features=2)
    weight = np.array([[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]])
    out = layer_forward(spec, [weight, np.array([0.5, -0.5])], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(out, [-1.5, 3.5])


def test_conv_with_centre_kernel_is_identity():
    spec = LayerSpec("conv2d", (1, 4, 4), out_channels=1)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    image = np.arange(16.0).reshape(1, 4, 4)
    np.testing.assert_allclose(layer_forward(spec, [kernel, np.zeros(1)], image), image)


def test_conv_pads_with_zeros():
    spec = LayerSpec("conv2d", (1, 3, 3), out_channels=1)
    out = layer_forward(spec, [np.ones((1, 1, 3, 3)), np.zeros(1)], np.ones((1, 3, 3)))
    np.testing.assert_allclose(out[0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_maxpool_takes_window_maxima():
    spec = LayerSpec("maxpool2d", (1, 4, 4))
    out = layer_forward(spec, [], np.arange(16.0).reshape(1, 4, 4))
    np.testing.assert_allclose(out[0], [[5, 7], [13, 15]])


def test_maxpool_drops_odd_border():
    assert LayerSpec("maxpool2d", (2, 5, 7)).output_shape == (2, 2, 3)


def test_maxpool_ties_route_gradient_to_the_first_maximum():
    spec = LayerSpec("maxpool2d", (1, 4, 5))
    x = np.zeros((1, 1, 4, 5))
    x[0, 0, :2, :2] = 2.0
    x[0, 0, :2, 2:4] = [[1.0, 4.0], [4.0, 0.0]]
    x[0, 0, :, 4] = 9.0
    out, cache = kernels.forward(spec, [], x)
    np.testing.assert_allclose(out[0, 0], [[2.0, 4.0], [0.0, 0.0]])
    grad_out = np.array([[[[1.5, 2.5], [3.0, 4.0]]]])
    grad_in, grads = kernels.backward(spec, [], cache, grad_out)
    expected = np.zeros((4, 5))
    expected[0, 0] = 1.5
    expected[0, 3] = 2.5
    expected[2, 0] = 3.0
    expected[2, 2] = 4.0
    np.testing.assert_array_equal(grad_in[0, 0], expected)
    assert grads == []


def test_activations():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(layer_forward(LayerSpec("relu", (3,)), [], x), [0.0, 0.0, 3.0])
    np.testing.assert_allclose(layer_forward(LayerSpec("sigmoid", (3,)), [], x)[1], 0.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "softmax", "input_shape": (3,)},
        {"kind": "dense", "input_shape": (1, 4, 4), "out_features": 2},
        {"kind": "dense", "input_shape": (4,)},
        {"kind": "conv2d", "input_shape": (4,), "out_channels": 2},
        {"kind": "maxpool2d", "input_shape": (1, 1, 4)},
        {"kind": "relu", "input_shape": (0,)},
    ],
)
def test_invalid_layer_specs_are_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        LayerSpec(**kwargs)


def test_layer_spec_round_trips_through_dict():
    spec = LayerSpec("conv2d", (2, 6, 6), out_channels=4)
    assert LayerSpec.from_dict(spec.to_dict()) == spec


def test_unchained_shapes_are_rejected():
    specs = [LayerSpec("dense", (4,), out_features=3), LayerSpec("dense", (5,), out_features=2)]
    with pytest.raises(ConfigurationError):
        Sequential(specs, [[np.zeros((3, 4)), np.zeros(3)], [np.zeros((2, 5)), np.zeros(2)]])


def test_wrong_parameter_shapes_are_rejected():
    specs = chain((4,), [{"kind": "dense", "out_features": 3}])
    with pytest.raises(ConfigurationError):
        Sequential(specs, [[np.zeros((4, 3)), np.zeros(3)]])


def test_backward_needs_a_cached_forward():
    network = _network((4,), [{"kind": "dense", "out_features": 2}])
    with pytest.raises(UsageError):
        network.backward(np.zeros((1, 2)))
    network.forward(np.zeros((1, 4)))
    with pytest.raises(UsageError):
        network.backward(np.zeros((1, 3)))


def test_single_samples_are_batched_and_wrong_shapes_refused():
    network = _network((4,), [{"kind": "dense", "out_features": 2}])
    assert network.forward(np.zeros(4)).shape == (1, 2)
    with pytest.raises(UsageError):
        network.forward(np.zeros((2, 5)))


def test_flat_parameters_round_trip():
    network = _network((2, 6, 6), [{"kind": "conv2d", "out_channels": 3}, {"kind": "flatten"}])
    blob = np.arange(network.num_params(), dtype=np.float64)
    network.set_flat(blob)
    np.testing.assert_array_equal(network.get_flat(), blob)
    with pytest.raises(ConfigurationError):
        network.set_flat(blob[:-1])


def test_copy_is_independent():
    network = _network((4,), [{"kind": "dense", "out_features": 2}])
    clone = network.copy()
    clone.parameters()[0][...] = 0.0
    assert np.any(network.parameters()[0] != 0.0)


def test_glorot_uniform_bounds_and_zero_bias():
    specs = chain((10,), [{"kind": "dense", "out_features": 6}])
    weight, bias = glorot_uniform(specs, np.random.default_rng(0))[0]
    assert np.all(np.abs(weight) <= np.sqrt(6.0 / 16.0))
    assert not bias.any()


def test_non_finite_inputs_are_rejected():
    with pytest.raises(NumericError):
        as_tensor([1.0, np.nan])
    assert np.isnan(as_tensor([np.nan], checked=False)[0])


def test_gradcheck_rejects_bad_step():
    network = _network((2,), [{"kind": "dense", "out_features": 1}])
    with pytest.raises(UsageError):
        finite_diff_check(network, np.ones((1, 2)), _projection_loss(np.ones((1, 1))), step=0.0)
