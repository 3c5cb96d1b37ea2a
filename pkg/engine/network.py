"""Sequential layer stacks with forward caches and reverse-mode gradients."""
import copy
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from engine import layers as kernels
from engine.tensor import LayerSpec, Tensor, as_tensor
from utils.exceptions import ConfigurationError, UsageError


@dataclass
class GradBundle:
    """Gradients of a scalar w.r.t. every parameter (per layer) and the input."""

    layers: List[List[Tensor]]
    input: Tensor

    def flat(self) -> List[Tensor]:
        """Parameter gradients in the same order as ``parameters()``."""
        return [g for layer in self.layers for g in layer]


def glorot_uniform(specs: List[LayerSpec], rng: np.random.Generator) -> List[List[Tensor]]:
    """
    Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases.

    Args:
        specs: Layer specs, initialized in order
        rng: Generator seeded by the caller

    Returns:
        Parameters per layer
    """
    params = []
    for spec in specs:
        shapes = spec.param_shapes()
        if not shapes:
            params.append([])
            continue
        fan_in, fan_out = spec.fans()
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=shapes[0])
        params.append([weight, np.zeros(shapes[1])])
    return params


class Sequential:
    """
    A chain of layers.

    Forward passes optionally keep per-layer caches; ``backward`` consumes them.
    A network instance is not safe for concurrent forward/backward calls.
    """

    def __init__(self, specs: List[LayerSpec], params: List[List[Tensor]]):
        for previous, current in zip(specs, specs[1:]):
            if previous.output_shape != current.input_shape:
                raise ConfigurationError(
                    f"layer shapes do not chain: {previous.kind} -> {previous.output_shape}, "
                    f"{current.kind} <- {current.input_shape}"
                )
        if len(params) != len(specs):
            raise ConfigurationError("one parameter list per layer is required")
        self.specs = list(specs)
        self.params = [[as_tensor(p) for p in layer] for layer in params]
        for spec, layer in zip(self.specs, self.params):
            kernels._check_params(spec, layer)
        self._caches: Optional[List] = None
        self._activations: Optional[List[Tensor]] = None

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.specs[0].input_shape

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self.specs[-1].output_shape

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.params for p in layer]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "Sequential":
        return Sequential(self.specs, copy.deepcopy(self.params))

    def get_flat(self) -> np.ndarray:
        if not self.parameters():
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, blob: np.ndarray):
        blob = as_tensor(blob)
        if blob.size != self.num_params():
            raise ConfigurationError(f"parameter blob has {blob.size} values, network needs {self.num_params()}")
        offset = 0
        for p in self.parameters():
            p[...] = blob[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def batched(self, x) -> Tensor:
        """Add a batch axis to a single sample; validate the sample shape."""
        x = as_tensor(x)
        if x.shape == self.input_shape:
            return x[None]
        if tuple(x.shape[1:]) != self.input_shape:
            raise UsageError(f"input shape {x.shape} does not match network input {self.input_shape}")
        return x

    def forward(self, x, keep_cache: bool = True) -> Tensor:
        """
        Evaluate the stack on a batch.

        Args:
            x: Batch ``(N, *input_shape)``
            keep_cache: Store caches and activations for a later ``backward``

        Returns:
            Output batch
        """
        x = self.batched(x)
        activations = [x]
        caches = []
        for spec, params in zip(self.specs, self.params):
            x, cache = kernels.forward(spec, params, x)
            activations.append(x)
            caches.append(cache)
        if keep_cache:
            self._caches = caches
            self._activations = activations
        return x

    def activation(self, index: int) -> Tensor:
        """Activation ``index`` of the cached pass (0 is the input)."""
        if self._activations is None:
            raise UsageError("no forward cache; call forward(keep_cache=True) first")
        return self._activations[index]

    def backward(self, upstream, extra: Optional[Dict[int, Tensor]] = None) -> GradBundle:
        """
        Reverse-mode gradients of <output, upstream> (+ <a_i, extra[i]>).

        Args:
            upstream: Cotangent of the network output
            extra: Additional cotangents keyed by activation index, for losses
                attached to intermediate activations

        Returns:
            Gradients for every parameter and the input
        """
        if self._caches is None:
            raise UsageError("no forward cache; call forward(keep_cache=True) first")
        grad = np.asarray(upstream, dtype=np.float64)
        if grad.shape != self._activations[-1].shape:
            raise UsageError(f"upstream shape {grad.shape} != output shape {self._activations[-1].shape}")
        extra = extra or {}
        layer_grads: List[List[Tensor]] = [None] * len(self.specs)
        for index in range(len(self.specs) - 1, -1, -1):
            if index + 1 in extra:
                grad = grad + extra[index + 1]
            grad, layer_grads[index] = kernels.backward(
                self.specs[index], self.params[index], self._caches[index], grad
            )
        if 0 in extra:
            grad = grad + extra[0]
        return GradBundle(layers=layer_grads, input=grad)

    def value_and_grad(self, x, loss: Callable) -> Tuple[float, GradBundle]:
        """``loss(output) -> (value, d value / d output)``; returns value and gradients."""
        out = self.forward(x)
        value, upstream = loss(out)
        return float(value), self.backward(upstream)

    def loss_value(self, x, loss: Callable) -> float:
        value, _ = loss(self.forward(x, keep_cache=False))
        return float(value)
