"""Tiny trainable encoders: visual, textual and joint (cross-modal).

Parameters live in a flat ``dict[str, ndarray]`` shared with the rest of the
model; this module owns the ``vis.*``, ``txt.*`` and ``joint.*`` entries.

* visual: centred patch means -> linear -> tanh -> linear -> L2 norm
* text: hashed tokens -> embedding table -> mean pool -> bias-free linear -> L2 norm
* joint: concat(visual, text) pre-norm features -> tanh MLP -> ``d`` vector
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import layers

_TOKEN_RE = re.compile(r"[a-z0-9]+")
PIXEL_SCALE = 4.0  # centred patch means, rescaled to roughly unit spread


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    hidden_dim: int = 64
    embed_dim: int = 32
    vocab_size: int = 4096
    token_dim: int = 32
    joint_dim: int | None = None

    @property
    def d(self) -> int:
        return self.joint_dim or self.embed_dim

    @property
    def patch_features(self) -> int:
        n = self.image_size // self.patch_size
        return n * n * 3


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if cfg.image_size % cfg.patch_size:
        raise ValueError("patch_size must divide image_size")
    P, H, D, E, d = cfg.patch_features, cfg.hidden_dim, cfg.embed_dim, cfg.token_dim, cfg.d
    def u(rng, shape, fan_in):
        return layers.uniform_init(rng, shape, fan_in, gain=3.0)

    return {
        "vis.W1": u(rng, (H, P), P), "vis.b1": np.zeros(H),
        "vis.W2": u(rng, (D, H), H), "vis.b2": np.zeros(D),
        "txt.E": rng.normal(0.0, 0.5, (cfg.vocab_size, E)),
        "txt.W": u(rng, (D, E), E),
        "joint.W1": u(rng, (2 * d, 2 * D), 2 * D), "joint.b1": np.zeros(2 * d),
        "joint.W2": u(rng, (d, 2 * d), 2 * d), "joint.b2": np.zeros(d),
    }


# ---------------------------------------------------------------------------
# visual


@dataclass
class ImageCache:
    x: np.ndarray
    h: np.ndarray
    v: np.ndarray  # pre-normalisation feature
    f: np.ndarray
    norms: np.ndarray


def patch_means(images: np.ndarray, patch: int) -> np.ndarray:
    B, H, W, C = images.shape
    g = images.reshape(B, H // patch, patch, W // patch, patch, C).mean(axis=(2, 4))
    return g.reshape(B, -1)


def _stack_images(images) -> np.ndarray:
    if isinstance(images, np.ndarray) and images.ndim == 4:
        return images.astype(np.float64, copy=False)
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images in a batch must share one shape, got {sorted(shapes)}")
    return np.stack([np.asarray(im, dtype=np.float64) for im in images])


def image_forward(params, images, patch_size: int) -> ImageCache:
    imgs = _stack_images(images)
    x = (patch_means(imgs, patch_size) - 0.5) * PIXEL_SCALE
    if x.shape[1] != params["vis.W1"].shape[1]:
        raise ValueError(f"image batch of shape {imgs.shape[1:]} does not match the encoder")
    h = np.tanh(layers.linear(x, params["vis.W1"], params["vis.b1"]))
    v = layers.linear(h, params["vis.W2"], params["vis.b2"])
    f, norms = layers.l2_normalize(v)
    return ImageCache(x, h, v, f, norms)


def image_backward(params, cache: ImageCache, df=None, dv=None) -> dict[str, np.ndarray]:
    """Gradients for ``vis.*`` given grads w.r.t. the normalised and/or raw feature."""
    g = np.zeros_like(cache.v) if dv is None else dv.copy()
    if df is not None:
        g += layers.l2_normalize_backward(df, cache.f, cache.norms)
    dh, dW2, db2 = layers.linear_backward(g, cache.h, params["vis.W2"])
    da = dh * (1.0 - cache.h ** 2)
    _, dW1, db1 = layers.linear_backward(da, cache.x, params["vis.W1"])
    return {"vis.W1": dW1, "vis.b1": db1, "vis.W2": dW2, "vis.b2": db2}


def encode_image(params, images, patch_size: int = 8) -> np.ndarray:
    """Unit-norm visual embeddings, one row per image."""
    return image_forward(params, images, patch_size).f


# ---------------------------------------------------------------------------
# text


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def token_ids(text: str, vocab_size: int) -> list[int]:
    return [zlib.crc32(t.encode()) % vocab_size for t in tokenize(text)]


@dataclass
class TextCache:
    pool: np.ndarray  # B x V mean-pooling weights
    e: np.ndarray
    t: np.ndarray
    f: np.ndarray
    norms: np.ndarray


def pooling_matrix(texts: Sequence[str], vocab_size: int) -> np.ndarray:
    pool = np.zeros((len(texts), vocab_size))
    for i, text in enumerate(texts):
        ids = token_ids(text, vocab_size) if text else []
        if not ids:
            raise ValueError(f"text {i} is empty or has no tokens")
        np.add.at(pool[i], ids, 1.0 / len(ids))
    return pool


def text_forward(params, texts: Sequence[str], pool: np.ndarray | None = None) -> TextCache:
    if pool is None:
        pool = pooling_matrix(texts, params["txt.E"].shape[0])
    e = pool @ params["txt.E"]
    t = e @ params["txt.W"].T
    f, norms = layers.l2_normalize(t)
    return TextCache(pool, e, t, f, norms)


def text_backward(params, cache: TextCache, df=None, dt=None) -> dict[str, np.ndarray]:
    g = np.zeros_like(cache.t) if dt is None else dt.copy()
    if df is not None:
        g += layers.l2_normalize_backward(df, cache.f, cache.norms)
    # no bias: a shared offset would let every caption collapse onto one direction
    de, dW, _ = layers.linear_backward(g, cache.e, params["txt.W"])
    return {"txt.E": cache.pool.T @ de, "txt.W": dW}


def encode_text(params, texts: Sequence[str]) -> np.ndarray:
    """Unit-norm text embeddings, one row per string."""
    return text_forward(params, texts).f


# ---------------------------------------------------------------------------
# joint


@dataclass
class JointCache:
    x: np.ndarray
    a: np.ndarray
    h: np.ndarray


def joint_forward(params, v: np.ndarray, t: np.ndarray) -> JointCache:
    x = np.concatenate([v, t], axis=1)
    a = np.tanh(layers.linear(x, params["joint.W1"], params["joint.b1"]))
    h = np.tanh(layers.linear(a, params["joint.W2"], params["joint.b2"]))
    return JointCache(x, a, h)


def joint_backward(params, cache: JointCache, dh: np.ndarray):
    """Returns ``(grads, dv, dt)`` for the joint encoder and its two inputs."""
    dz2 = dh * (1.0 - cache.h ** 2)
    da, dW2, db2 = layers.linear_backward(dz2, cache.a, params["joint.W2"])
    dz1 = da * (1.0 - cache.a ** 2)
    dx, dW1, db1 = layers.linear_backward(dz1, cache.x, params["joint.W1"])
    D = cache.x.shape[1] // 2
    grads = {"joint.W1": dW1, "joint.b1": db1, "joint.W2": dW2, "joint.b2": db2}
    return grads, dx[:, :D], dx[:, D:]


def encode_joint(params, image, text: str, patch_size: int = 8) -> np.ndarray:
    """The CLS-style joint vector for one (image, text) pair."""
    v = image_forward(params, [image], patch_size).v
    t = text_forward(params, [text]).t
    return joint_forward(params, v, t).h[0]
