"""Classifiers whose penultimate sigmoid layer reconstructs a class pattern."""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax

from engine import layers as kernels
from engine.network import GradBundle, Sequential, glorot_uniform
from engine.tensor import LayerSpec, Tensor, as_tensor, chain
from utils.exceptions import ConfigurationError, UsageError

ARCHITECTURES = ("small-conv", "mlp")
MLP_HIDDEN = 256


@dataclass
class Prediction:
    """Outputs of one forward pass: probabilities, surrogate and logits."""

    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    s_logits: np.ndarray

    @property
    def predicted(self) -> np.ndarray:
        return self.y.argmax(axis=-1)


@dataclass
class SurrogateOutputs:
    """Head activations handed to a loss: class logits and surrogate logits."""

    z: np.ndarray
    s_logits: np.ndarray
    s: np.ndarray


def normalize_input_shape(input_shape) -> Tuple[int, int, int]:
    """Accept (H, W) or (C, H, W); return (C, H, W)."""
    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 2:
        shape = (1,) + shape
    if len(shape) != 3 or any(d <= 0 for d in shape):
        raise ConfigurationError(f"input shape must be (H, W) or (C, H, W), got {input_shape}")
    return shape


def trunk_layers(arch: str) -> List[Dict]:
    if arch == "small-conv":
        return [
            {"kind": "conv2d", "out_channels": 16},
            {"kind": "relu"},
            {"kind": "maxpool2d"},
            {"kind": "conv2d", "out_channels": 32},
            {"kind": "relu"},
            {"kind": "maxpool2d"},
            {"kind": "flatten"},
        ]
    if arch == "mlp":
        return [
            {"kind": "flatten"},
            {"kind": "dense", "out_features": MLP_HIDDEN},
            {"kind": "relu"},
        ]
    raise ConfigurationError(f"unknown architecture '{arch}'; choose one of {ARCHITECTURES}")


class SurrogateModel:
    """
    Trunk h -> dense(m) -> sigmoid (surrogate s) -> dense(K) (class logits z).

    The classifier consumes the sigmoid activations s. Activations of the
    underlying stack: ``a[-3]`` surrogate logits, ``a[-2]`` s, ``a[-1]`` z.
    """

    def __init__(self, arch: str, network: Sequential, m: int, K: int):
        specs = network.specs
        if len(specs) < 3 or [s.kind for s in specs[-3:]] != ["dense", "sigmoid", "dense"]:
            raise ConfigurationError("network must end with dense(m) -> sigmoid -> dense(K)")
        if specs[-3].out_features != m or specs[-1].in_features != m or specs[-1].out_features != K:
            raise ConfigurationError(f"heads do not match m={m}, K={K}")
        self.arch = arch
        self.network = network
        self.m = m
        self.K = K

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.network.input_shape

    @property
    def image_side(self) -> int:
        return self.input_shape[-1]

    @property
    def pattern_side(self) -> int:
        return math.isqrt(self.m)

    @property
    def classifier(self) -> Tuple[np.ndarray, np.ndarray]:
        """Weight rows and biases of the linear classifier f."""
        weight, bias = self.network.params[-1]
        return weight, bias

    def parameters(self) -> List[Tensor]:
        return self.network.parameters()

    def num_params(self) -> int:
        return self.network.num_params()

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(self.arch, self.network.copy(), self.m, self.K)

    def batched(self, x) -> np.ndarray:
        """Promote (H, W), (C, H, W) or (N, H, W) inputs to (N, C, H, W)."""
        x = as_tensor(x)
        c, h, w = self.input_shape
        if x.shape == (h, w):
            return x.reshape(1, c, h, w)
        if x.shape == (c, h, w):
            return x[None]
        if c == 1 and x.ndim == 3 and x.shape[1:] == (h, w):
            return x[:, None]
        if x.ndim == 4 and x.shape[1:] == (c, h, w):
            return x
        raise UsageError(f"input shape {x.shape} does not match model input {self.input_shape}")

    def forward(self, x, keep_cache: bool = True) -> SurrogateOutputs:
        """Forward pass; ``keep_cache=False`` leaves any cached pass untouched."""
        x = self.batched(x)
        if keep_cache:
            z = self.network.forward(x)
            return SurrogateOutputs(z=z, s_logits=self.network.activation(-3), s=self.network.activation(-2))
        activations = [x]
        for spec, params in zip(self.network.specs, self.network.params):
            out, _ = kernels.forward(spec, params, activations[-1])
            activations.append(out)
        return SurrogateOutputs(z=activations[-1], s_logits=activations[-3], s=activations[-2])

    def backward(self, dz: np.ndarray, ds_logits: Optional[np.ndarray] = None) -> GradBundle:
        """
        Gradients of <z, dz> + <s_logits, ds_logits> for the cached pass.

        Args:
            dz: Cotangent of the class logits ``(N, K)``
            ds_logits: Optional cotangent of the surrogate logits ``(N, m)``

        Returns:
            GradBundle for all parameters and the input batch
        """
        extra = {}
        if ds_logits is not None:
            extra[len(self.network.specs) - 2] = ds_logits
        return self.network.backward(dz, extra)

    def value_and_grad(self, x, loss: Callable) -> Tuple[float, GradBundle]:
        """``loss(SurrogateOutputs) -> (value, dz, ds_logits)``."""
        outputs = self.forward(x)
        value, dz, ds = loss(outputs)
        return float(value), self.backward(dz, ds)

    def loss_value(self, x, loss: Callable) -> float:
        value, _, _ = loss(self.forward(x, keep_cache=False))
        return float(value)


def build_model(arch: str, input_shape, m: int, K: int, seed: int) -> SurrogateModel:
    """
    Build a reference architecture with seeded Glorot-uniform weights.

    Args:
        arch: ``small-conv`` or ``mlp``
        input_shape: (H, W) or (C, H, W)
        m: Surrogate size; must be a perfect square
        K: Number of classes (>= 2)
        seed: Initialization seed

    Returns:
        A freshly initialized SurrogateModel
    """
    if m <= 0 or math.isqrt(m) ** 2 != m:
        raise ConfigurationError(f"surrogate size m={m} is not a perfect square")
    if K < 2:
        raise ConfigurationError("at least two classes are required")
    shape = normalize_input_shape(input_shape)
    layers = trunk_layers(arch) + [
        {"kind": "dense", "out_features": m},
        {"kind": "sigmoid"},
        {"kind": "dense", "out_features": K},
    ]
    specs = chain(shape, layers)
    params = glorot_uniform(specs, np.random.default_rng(seed))
    return SurrogateModel(arch, Sequential(specs, params), m, K)


def model_from_specs(arch: str, specs: List[LayerSpec], m: int, K: int) -> SurrogateModel:
    """Zero-initialized model for the given specs (checkpoint loading)."""
    params = [[np.zeros(shape) for shape in spec.param_shapes()] for spec in specs]
    return SurrogateModel(arch, Sequential(specs, params), m, K)


def predict(model: SurrogateModel, x) -> Prediction:
    """
    Class probabilities, surrogate activations and logits for ``x``.

    Single samples return 1-D arrays; batches return arrays with a leading
    sample axis. The model's forward cache is not modified.
    """
    x = as_tensor(x)
    c, h, w = model.input_shape
    single = x.shape in ((h, w), (c, h, w))
    outputs = model.forward(x, keep_cache=False)
    result = Prediction(y=softmax(outputs.z, axis=1), s=outputs.s, z=outputs.z, s_logits=outputs.s_logits)
    if single:
        return Prediction(y=result.y[0], s=result.s[0], z=result.z[0], s_logits=result.s_logits[0])
    return result
