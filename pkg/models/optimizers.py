"""First-order optimizers updating parameter arrays in place."""
from typing import List

import numpy as np

from utils.exceptions import ConfigurationError


class SGDMomentum:
    """Heavy-ball SGD: v = mu * v - lr * g; p += v."""

    def __init__(self, params: List[np.ndarray], learning_rate: float, momentum: float = 0.9):
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]):
        for p, g, v in zip(self.params, grads, self.velocity):
            v *= self.momentum
            v -= self.learning_rate * g
            p += v


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(
        self,
        params: List[np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.first = [np.zeros_like(p) for p in params]
        self.second = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.first, self.second):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def make_optimizer(name: str, params: List[np.ndarray], learning_rate: float, momentum: float = 0.9):
    if name == "adam":
        return Adam(params, learning_rate)
    if name == "sgd-momentum":
        return SGDMomentum(params, learning_rate, momentum)
    raise ConfigurationError(f"unknown optimizer '{name}'")
