"""Dense float64 arrays and declarative layer specifications."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import settings
from utils.exceptions import ConfigurationError, NumericError

# Arrays are plain numpy float64 ndarrays; this alias documents intent.
Tensor = np.ndarray

LAYER_KINDS = ("dense", "conv2d", "relu", "sigmoid", "maxpool2d", "flatten")
KERNEL_SIZE = 3
POOL_SIZE = 2


def as_tensor(values, checked: Optional[bool] = None) -> Tensor:
    """
    Convert ``values`` to a contiguous float64 array.

    Args:
        values: Anything numpy can turn into an array
        checked: Reject NaN/Inf; defaults to ``settings.checked_tensors``

    Returns:
        Row-major float64 array

    Raises:
        NumericError: If checking is enabled and a value is not finite
    """
    array = np.ascontiguousarray(values, dtype=np.float64)
    if checked is None:
        checked = settings.checked_tensors
    if checked and not np.all(np.isfinite(array)):
        raise NumericError("tensor contains NaN or Inf values")
    return array


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a sequential stack.

    ``input_shape`` is the per-sample shape (no batch axis): ``(features,)`` for
    dense layers and ``(channels, height, width)`` for spatial ones.
    """

    kind: str
    input_shape: Tuple[int, ...]
    out_features: int = 0
    out_channels: int = 0
    _output_shape: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind '{self.kind}'")
        shape = tuple(int(d) for d in self.input_shape)
        if not shape or any(d <= 0 for d in shape):
            raise ConfigurationError(f"{self.kind}: invalid input shape {shape}")
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "_output_shape", self._infer_output_shape())

    def _infer_output_shape(self) -> Tuple[int, ...]:
        shape = self.input_shape
        if self.kind == "dense":
            if len(shape) != 1:
                raise ConfigurationError(f"dense expects a flat input, got {shape}")
            if self.out_features <= 0:
                raise ConfigurationError("dense needs out_features > 0")
            return (self.out_features,)
        if self.kind == "conv2d":
            if len(shape) != 3:
                raise ConfigurationError(f"conv2d expects (C, H, W), got {shape}")
            if self.out_channels <= 0:
                raise ConfigurationError("conv2d needs out_channels > 0")
            return (self.out_channels, shape[1], shape[2])
        if self.kind == "maxpool2d":
            if len(shape) != 3 or shape[1] < POOL_SIZE or shape[2] < POOL_SIZE:
                raise ConfigurationError(f"maxpool2d expects (C, H>=2, W>=2), got {shape}")
            return (shape[0], shape[1] // POOL_SIZE, shape[2] // POOL_SIZE)
        if self.kind == "flatten":
            return (int(np.prod(shape)),)
        return shape

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self._output_shape

    @property
    def in_features(self) -> int:
        return self.input_shape[0]

    @property
    def in_channels(self) -> int:
        return self.input_shape[0]

    def param_shapes(self) -> List[Tuple[int, ...]]:
        """Shapes of the layer's parameters: ``[weight, bias]`` or ``[]``."""
        if self.kind == "dense":
            return [(self.out_features, self.in_features), (self.out_features,)]
        if self.kind == "conv2d":
            return [
                (self.out_channels, self.in_channels, KERNEL_SIZE, KERNEL_SIZE),
                (self.out_channels,),
            ]
        return []

    def fans(self) -> Tuple[int, int]:
        """(fan_in, fan_out) of the weight tensor, used for initialization."""
        if self.kind == "dense":
            return self.in_features, self.out_features
        if self.kind == "conv2d":
            area = KERNEL_SIZE * KERNEL_SIZE
            return self.in_channels * area, self.out_channels * area
        return 0, 0

    def to_dict(self) -> Dict:
        data = {"kind": self.kind, "input_shape": list(self.input_shape)}
        if self.kind == "dense":
            data["out_features"] = self.out_features
        elif self.kind == "conv2d":
            data["out_channels"] = self.out_channels
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "LayerSpec":
        return cls(
            kind=data["kind"],
            input_shape=tuple(data["input_shape"]),
            out_features=int(data.get("out_features", 0)),
            out_channels=int(data.get("out_channels", 0)),
        )


def chain(input_shape: Tuple[int, ...], layers: List[Dict]) -> List[LayerSpec]:
    """
    Build a list of specs whose shapes chain from ``input_shape``.

    Args:
        input_shape: Per-sample shape fed to the first layer
        layers: Dicts with ``kind`` and kind-specific sizes

    Returns:
        Specs with each input shape equal to the previous output shape
    """
    specs = []
    shape = tuple(input_shape)
    for layer in layers:
        spec = LayerSpec(
            kind=layer["kind"],
            input_shape=shape,
            out_features=layer.get("out_features", 0),
            out_channels=layer.get("out_channels", 0),
        )
        specs.append(spec)
        shape = spec.output_shape
    return specs
