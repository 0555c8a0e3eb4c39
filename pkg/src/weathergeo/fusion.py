"""Text-driven channel gating that mixes visual and textual embeddings.

    z = relu(f_T W1^T + b1)          (B x D/r)
    g = sigmoid(z W2^T + b2)         (B x D), strictly inside (0, 1)
    f_fuse = g * f_I + (1 - g) * f_T

``concat`` and ``static`` are the ablation variants: plain concatenation
(width 2D) and a fixed gate of 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers

MODES = ("concat", "static", "dynamic")
LOGIT_BOUND = 36.0


@dataclass
class GateParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def reduction_ratio(self) -> int:
        return self.W2.shape[0] // self.W1.shape[0]

    @classmethod
    def from_dict(cls, params: dict) -> "GateParams":
        return cls(params["gate.W1"], params["gate.b1"], params["gate.W2"], params["gate.b2"])

    @classmethod
    def zeros(cls, dim: int, r: int) -> "GateParams":
        _check_ratio(dim, r)
        k = dim // r
        return cls(np.zeros((k, dim)), np.zeros(k), np.zeros((dim, k)), np.zeros(dim))


def _check_ratio(dim: int, r: int) -> None:
    if r < 1 or dim % r:
        raise ValueError(f"reduction ratio {r} must divide the embedding width {dim}")


def init_gate_params(dim: int, r: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    # zero biases: a fresh gate starts at g = sigmoid(W2 relu(W1 f)) close to 0.5
    _check_ratio(dim, r)
    k = dim // r
    return {
        "gate.W1": layers.uniform_init(rng, (k, dim), dim), "gate.b1": np.zeros(k),
        "gate.W2": layers.uniform_init(rng, (dim, k), k), "gate.b2": np.zeros(dim),
    }


@dataclass
class GateCache:
    f_T: np.ndarray
    pre_z: np.ndarray
    z: np.ndarray
    g: np.ndarray


def gate_forward(params: GateParams, f_T: np.ndarray, return_cache: bool = False):
    D = params.W1.shape[1]
    if f_T.ndim != 2 or f_T.shape[1] != D or params.W2.shape != (D, params.W1.shape[0]):
        raise ValueError(f"gate expects B x {D} text embeddings, got {f_T.shape}")
    pre_z = layers.linear(f_T, params.W1, params.b1)
    z = layers.relu(pre_z)
    # |logit| <= 36 keeps g strictly inside (0, 1) in double precision
    g = layers.sigmoid(np.clip(layers.linear(z, params.W2, params.b2), -LOGIT_BOUND, LOGIT_BOUND))
    if return_cache:
        return g, GateCache(f_T, pre_z, z, g)
    return g


def gate_backward(params: GateParams, cache: GateCache, dg: np.ndarray):
    """Returns ``(grads, df_T)``; grads keyed like the flat model dict."""
    ds = dg * cache.g * (1.0 - cache.g)
    dz, dW2, db2 = layers.linear_backward(ds, cache.z, params.W2)
    dpre = dz * (cache.pre_z > 0)
    df_T, dW1, db1 = layers.linear_backward(dpre, cache.f_T, params.W1)
    return {"gate.W1": dW1, "gate.b1": db1, "gate.W2": dW2, "gate.b2": db2}, df_T


def fuse(f_I: np.ndarray, f_T: np.ndarray, g: np.ndarray) -> np.ndarray:
    if not (f_I.shape == f_T.shape == g.shape):
        raise ValueError(f"shape mismatch: f_I {f_I.shape}, f_T {f_T.shape}, g {g.shape}")
    return g * f_I + (1.0 - g) * f_T


def fuse_backward(df: np.ndarray, f_I: np.ndarray, f_T: np.ndarray, g: np.ndarray):
    """Returns ``(df_I, df_T, dg)``."""
    return g * df, (1.0 - g) * df, df * (f_I - f_T)


def fuse_variant(mode: str, f_I: np.ndarray, f_T: np.ndarray,
                 params: GateParams | None = None) -> np.ndarray:
    if mode == "concat":
        if f_I.shape != f_T.shape:
            raise ValueError(f"shape mismatch: f_I {f_I.shape}, f_T {f_T.shape}")
        return np.concatenate([f_I, f_T], axis=1)
    if mode == "static":
        return fuse(f_I, f_T, np.full(f_I.shape, 0.5))
    if mode == "dynamic":
        if params is None:
            raise ValueError("dynamic fusion needs gate parameters")
        return fuse(f_I, f_T, gate_forward(params, f_T))
    raise ValueError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
