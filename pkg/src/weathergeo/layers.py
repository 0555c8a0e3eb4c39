"""Small numpy building blocks with explicit backward passes.

Every forward helper here has a matching ``*_backward`` that takes the
upstream gradient and whatever the forward returned or consumed. Arrays are
row-major batches: ``x`` has shape ``(B, in_features)`` and weights follow the
``y = x @ W.T + b`` convention, so ``W`` is ``(out_features, in_features)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ W.T + b


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Return ``(dx, dW, db)`` for ``y = x @ W.T + b``."""
    return dy @ W, dy.T @ x, dy.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    # exact form: x * Phi(x), Phi the standard normal CDF
    return x * ndtr(x)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def l2_normalize(x: np.ndarray):
    """Row-normalise ``x``; returns ``(y, norms)`` with norms shaped ``(B, 1)``."""
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    norms = np.maximum(norms, 1e-12)
    return x / norms, norms


def l2_normalize_backward(dy: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / norms


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 gain: float = 1.0) -> np.ndarray:
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
