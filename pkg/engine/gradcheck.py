"""Central finite-difference oracle for analytic gradients."""
import logging
from typing import Callable, Optional

import numpy as np

from engine.tensor import as_tensor
from utils.exceptions import NumericError, UsageError

logger = logging.getLogger(__name__)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)


def finite_diff_check(
    model,
    x,
    loss: Callable,
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare analytic gradients with central differences.

    ``model`` is anything exposing ``parameters()``, ``value_and_grad(x, loss)``
    and ``loss_value(x, loss)``: a :class:`Sequential` or a surrogate model.

    Args:
        model: Differentiable model; parameters are perturbed in place and restored
        x: Input batch
        loss: Objective handle understood by ``model``
        step: Finite-difference step
        max_entries: Check at most this many random entries per array (all if None)
        seed: Seed for the entry subsample

    Returns:
        Max over checked entries of |a - c| / (|a| + |c| + 1e-12); 0 if nothing to check

    Raises:
        NumericError: If the loss is not finite
    """
    if step <= 0:
        raise UsageError("finite-difference step must be positive")
    x = as_tensor(x).copy()
    value, grads = model.value_and_grad(x, loss)
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    rng = np.random.default_rng(seed)

    def entries(size: int):
        if max_entries is None or size <= max_entries:
            return range(size)
        return rng.choice(size, size=max_entries, replace=False)

    def central(evaluate, array, flat_index):
        view = array.reshape(-1)
        original = view[flat_index]
        view[flat_index] = original + step
        plus = evaluate()
        view[flat_index] = original - step
        minus = evaluate()
        view[flat_index] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError("loss is not finite under perturbation")
        return (plus - minus) / (2.0 * step)

    worst = 0.0
    evaluate_params = lambda: model.loss_value(x, loss)
    for param, grad in zip(model.parameters(), grads.flat()):
        flat_grad = grad.reshape(-1)
        for i in entries(param.size):
            numeric = central(evaluate_params, param, i)
            worst = max(worst, _relative_error(flat_grad[i], numeric))

    flat_input_grad = grads.input.reshape(-1)
    for i in entries(x.size):
        numeric = central(evaluate_params, x, i)
        worst = max(worst, _relative_error(flat_input_grad[i], numeric))

    logger.debug("finite-difference check: max relative error %.3e", worst)
    return worst
