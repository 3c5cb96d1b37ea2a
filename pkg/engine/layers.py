"""Forward and backward kernels for every supported layer kind.

All kernels work on batches: the leading axis of every activation is the
sample axis, the remaining axes follow ``LayerSpec.input_shape``.
"""
from typing import Any, List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from engine.tensor import KERNEL_SIZE, POOL_SIZE, LayerSpec, Tensor, as_tensor
from utils.exceptions import ConfigurationError, UsageError

PAD = KERNEL_SIZE // 2


def _check_params(spec: LayerSpec, params: List[Tensor]):
    expected = spec.param_shapes()
    if len(params) != len(expected):
        raise ConfigurationError(f"{spec.kind}: expected {len(expected)} parameter arrays, got {len(params)}")
    for array, shape in zip(params, expected):
        if tuple(array.shape) != shape:
            raise ConfigurationError(f"{spec.kind}: parameter shape {array.shape} != {shape}")


def _im2col(x: Tensor) -> Tensor:
    """Rows of 3x3 zero-padded neighbourhoods, one row per (sample, y, x)."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    windows = sliding_window_view(padded, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL_SIZE * KERNEL_SIZE)


def forward(spec: LayerSpec, params: List[Tensor], x: Tensor) -> Tuple[Tensor, Any]:
    """
    Run one layer on a batch.

    Args:
        spec: Layer specification
        params: ``[weight, bias]`` for dense/conv2d, empty otherwise
        x: Batch of shape ``(N, *spec.input_shape)``

    Returns:
        ``(output, cache)``; the cache feeds :func:`backward`
    """
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ConfigurationError(f"{spec.kind}: input shape {tuple(x.shape[1:])} != declared {spec.input_shape}")
    _check_params(spec, params)
    kind = spec.kind

    if kind == "dense":
        weight, bias = params
        return x @ weight.T + bias, x

    if kind == "conv2d":
        weight, bias = params
        n, _, h, w = x.shape
        cols = _im2col(x)
        out = cols @ weight.reshape(weight.shape[0], -1).T + bias
        return out.reshape(n, h, w, -1).transpose(0, 3, 1, 2), cols

    if kind == "relu":
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    if kind == "sigmoid":
        out = expit(x)
        return out, out

    if kind == "maxpool2d":
        n, c, h, w = x.shape
        h2, w2 = h // POOL_SIZE, w // POOL_SIZE
        cropped = x[:, :, : h2 * POOL_SIZE, : w2 * POOL_SIZE]
        windows = (
            cropped.reshape(n, c, h2, POOL_SIZE, w2, POOL_SIZE)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h2, w2, POOL_SIZE * POOL_SIZE)
        )
        # argmax returns the first maximum in row-major window order
        winner = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
        return out, winner

    # flatten
    return x.reshape(x.shape[0], -1), x.shape


def backward(spec: LayerSpec, params: List[Tensor], cache: Any, grad_out: Tensor) -> Tuple[Tensor, List[Tensor]]:
    """
    Reverse-mode step through one layer.

    Args:
        spec: Layer specification
        params: Parameters used in the forward pass
        cache: Second element returned by :func:`forward`
        grad_out: Cotangent of the layer output, shape ``(N, *spec.output_shape)``

    Returns:
        ``(grad_input, param_grads)`` with ``param_grads`` aligned to ``params``
    """
    if tuple(grad_out.shape[1:]) != spec.output_shape:
        raise UsageError(f"{spec.kind}: upstream shape {tuple(grad_out.shape[1:])} != {spec.output_shape}")
    kind = spec.kind

    if kind == "dense":
        weight, _ = params
        x = cache
        return grad_out @ weight, [grad_out.T @ x, grad_out.sum(axis=0)]

    if kind == "conv2d":
        weight, _ = params
        cols = cache
        n, o, h, w = grad_out.shape
        c = spec.in_channels
        g = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        w_mat = weight.reshape(o, -1)
        grad_weight = (g.T @ cols).reshape(weight.shape)
        grad_bias = g.sum(axis=0)
        dcols = (g @ w_mat).reshape(n, h, w, c, KERNEL_SIZE, KERNEL_SIZE).transpose(0, 3, 1, 2, 4, 5)
        padded = np.zeros((n, c, h + 2 * PAD, w + 2 * PAD))
        for i in range(KERNEL_SIZE):
            for j in range(KERNEL_SIZE):
                padded[:, :, i : i + h, j : j + w] += dcols[..., i, j]
        return padded[:, :, PAD : PAD + h, PAD : PAD + w], [grad_weight, grad_bias]

    if kind == "relu":
        return np.where(cache, grad_out, 0.0), []

    if kind == "sigmoid":
        out = cache
        return grad_out * out * (1.0 - out), []

    if kind == "maxpool2d":
        winner = cache
        c, h, w = spec.input_shape
        n = grad_out.shape[0]
        h2, w2 = grad_out.shape[2], grad_out.shape[3]
        routed = np.zeros((n, c, h2, w2, POOL_SIZE * POOL_SIZE))
        np.put_along_axis(routed, winner[..., None], grad_out[..., None], axis=-1)
        block = (
            routed.reshape(n, c, h2, w2, POOL_SIZE, POOL_SIZE)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h2 * POOL_SIZE, w2 * POOL_SIZE)
        )
        grad_in = np.zeros((n, c, h, w))
        grad_in[:, :, : h2 * POOL_SIZE, : w2 * POOL_SIZE] = block
        return grad_in, []

    # flatten
    return grad_out.reshape(cache), []


def layer_forward(spec: LayerSpec, params: List[Tensor], x) -> Tensor:
    """
    Pure single-layer evaluation; accepts one sample or a batch.

    Args:
        spec: Layer specification
        params: Layer parameters
        x: Array of shape ``spec.input_shape`` or ``(N, *spec.input_shape)``

    Returns:
        Layer output with the same batching as ``x``
    """
    x = as_tensor(x)
    single = x.shape == spec.input_shape
    batch = x[None] if single else x
    out, _ = forward(spec, [as_tensor(p) for p in params], batch)
    return out[0] if single else out
