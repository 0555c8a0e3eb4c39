"""Training objectives with exact gradients.

* contrastive: symmetric softmax over the temperature-scaled similarity matrix
* matching: binary cross-entropy over B positives and 2B mined hard negatives
* localised alignment: box MLP, ``(1 - IoU) + L1`` on centre-size boxes
* classification: softmax cross-entropy over location classes

Every ``*_loss`` returns the scalar loss together with its gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from . import layers

TAU_MIN, TAU_MAX = 0.01, 1.0


class TrainingStepError(RuntimeError):
    """A loss component went non-finite."""


# ---------------------------------------------------------------------------
# contrastive


def similarity_matrix(I: np.ndarray, T: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if I.shape != T.shape:
        raise ValueError(f"embedding batches differ in shape: {I.shape} vs {T.shape}")
    return I @ T.T / tau


def itc_from_similarity(S: np.ndarray):
    """Loss and ``dL/dS`` for a square similarity matrix."""
    B = S.shape[0]
    if S.ndim != 2 or S.shape[1] != B:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    if B < 2:
        raise ValueError("contrastive loss needs at least two pairs")
    diag = np.diagonal(S)
    log_p_it = diag - logsumexp(S, axis=1)
    log_p_ti = diag - logsumexp(S, axis=0)
    loss = -(log_p_it.sum() + log_p_ti.sum()) / (2 * B)
    eye = np.eye(B)
    dS = (softmax(S, axis=1) - eye + softmax(S, axis=0) - eye) / (2 * B)
    return float(loss), dS


def itc_loss(I: np.ndarray, T: np.ndarray, tau: float):
    """Returns ``(loss, dI, dT, dtau)``."""
    S = similarity_matrix(I, T, tau)
    loss, dS = itc_from_similarity(S)
    dI = dS @ T / tau
    dT = dS.T @ I / tau
    dtau = -float(np.sum(dS * S)) / tau
    return loss, dI, dT, dtau


# ---------------------------------------------------------------------------
# matching


def mine_hard_negatives(S: np.ndarray):
    """Off-diagonal argmax per row (texts) and per column (images).

    Ties resolve to the smallest index.
    """
    B = S.shape[0]
    if B < 2:
        raise ValueError("hard-negative mining needs at least two pairs")
    masked = np.where(np.eye(B, dtype=bool), -np.inf, S)
    return np.argmax(masked, axis=1), np.argmax(masked, axis=0)


def itm_pairs(text_neg: np.ndarray, image_neg: np.ndarray):
    """Image/text index pairs and labels: B positives, then the 2B negatives."""
    B = len(text_neg)
    idx = np.arange(B)
    img = np.concatenate([idx, idx, image_neg])
    txt = np.concatenate([idx, text_neg, idx])
    labels = np.concatenate([np.ones(B), np.zeros(2 * B)])
    return img, txt, labels


def itm_loss(w: np.ndarray, b: float, h: np.ndarray, labels: np.ndarray):
    """Binary cross-entropy of ``sigmoid(h @ w + b)``.

    Returns ``(loss, grads, dh)`` with grads keyed ``itm.w`` / ``itm.b``.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if n == 0 or n % 3 or labels.sum() != n // 3 or h.shape[0] != n:
        raise ValueError(f"expected 3B pairs with exactly B positives, got {n} pairs")
    logits = h @ w + b
    # log(1 + e^x) - y x, written without overflow
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    dlogit = (layers.sigmoid(logits) - labels) / n
    grads = {"itm.w": h.T @ dlogit, "itm.b": np.array([dlogit.sum()])}
    return loss, grads, np.outer(dlogit, w)


# ---------------------------------------------------------------------------
# boxes


@dataclass
class BoxCache:
    x: np.ndarray
    pre1: np.ndarray
    a: np.ndarray
    out: np.ndarray


def box_head_forward(params: dict, x: np.ndarray, return_cache: bool = False):
    """``sigmoid(W2 gelu(W1 x + b1) + b2)`` row-wise; output in (0, 1)^4."""
    x2 = np.atleast_2d(x)
    pre1 = layers.linear(x2, params["loc.W1"], params["loc.b1"])
    a = layers.gelu(pre1)
    out = layers.sigmoid(layers.linear(a, params["loc.W2"], params["loc.b2"]))
    if np.ndim(x) == 1:
        out_ret = out[0]
    else:
        out_ret = out
    if return_cache:
        return out_ret, BoxCache(x2, pre1, a, out)
    return out_ret


def box_head_backward(params: dict, cache: BoxCache, dout: np.ndarray):
    ds = dout * cache.out * (1.0 - cache.out)
    da, dW2, db2 = layers.linear_backward(ds, cache.a, params["loc.W2"])
    dpre = da * layers.gelu_grad(cache.pre1)
    dx, dW1, db1 = layers.linear_backward(dpre, cache.x, params["loc.W1"])
    return {"loc.W1": dW1, "loc.b1": db1, "loc.W2": dW2, "loc.b2": db2}, dx


def iou(a, b, return_grad: bool = False):
    """IoU of centre-size boxes; arrays of shape ``(..., 4)`` broadcast.

    A zero union gives IoU 0. With ``return_grad`` also returns dIoU/d``b``;
    where an intersection edge is shared by both boxes the edge is credited
    to ``b``, and touching boxes (zero-width overlap) are differentiated as
    overlapping.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax1, ax2 = a[..., 0] - a[..., 2] / 2, a[..., 0] + a[..., 2] / 2
    ay1, ay2 = a[..., 1] - a[..., 3] / 2, a[..., 1] + a[..., 3] / 2
    bx1, bx2 = b[..., 0] - b[..., 2] / 2, b[..., 0] + b[..., 2] / 2
    by1, by2 = b[..., 1] - b[..., 3] / 2, b[..., 1] + b[..., 3] / 2
    iw_raw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih_raw = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    iw, ih = np.maximum(iw_raw, 0.0), np.maximum(ih_raw, 0.0)
    inter = iw * ih
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    union = area_a + area_b - inter
    ok = union > 0
    safe = np.where(ok, union, 1.0)
    # corner arithmetic can overshoot 1 by an ulp for identical boxes
    value = np.where(ok, np.minimum(inter / safe, 1.0), 0.0)
    if not return_grad:
        return value if value.ndim else float(value)

    d_inter = np.where(ok, (union + inter) / safe ** 2, 0.0)
    d_area_b = np.where(ok, -inter / safe ** 2, 0.0)
    gw = (iw_raw >= 0) * ih  # d inter / d iw_raw
    gh = (ih_raw >= 0) * iw
    dx2 = gw * (bx2 <= ax2)
    dx1 = -gw * (bx1 >= ax1)
    dy2 = gh * (by2 <= ay2)
    dy1 = -gh * (by1 >= ay1)
    grad = np.stack([
        d_inter * (dx1 + dx2),
        d_inter * (dy1 + dy2),
        d_inter * (dx2 - dx1) / 2 + d_area_b * b[..., 3],
        d_inter * (dy2 - dy1) / 2 + d_area_b * b[..., 2],
    ], axis=-1)
    return value, grad


def check_boxes(boxes: np.ndarray, tol: float = 1e-6) -> None:
    boxes = np.atleast_2d(boxes)
    cx, cy, w, h = boxes.T
    bad = (
        (w <= 0) | (h <= 0)
        | (cx - w / 2 < -tol) | (cx + w / 2 > 1 + tol)
        | (cy - h / 2 < -tol) | (cy + h / 2 > 1 + tol)
    )
    if np.any(bad):
        raise ValueError(f"invalid ground-truth boxes at rows {np.flatnonzero(bad).tolist()}")


def box_loss(gt: np.ndarray, pred: np.ndarray):
    """Mean of ``(1 - IoU) + L1`` over rows; returns ``(loss, dpred)``."""
    gt = np.atleast_2d(gt)
    pred = np.atleast_2d(pred)
    check_boxes(gt)
    n = gt.shape[0]
    value, d_iou = iou(gt, pred, return_grad=True)
    diff = pred - gt
    loss = float(np.mean(1.0 - value + np.abs(diff).sum(axis=1)))
    dpred = (-d_iou + np.sign(diff)) / n
    return loss, dpred


def la_loss(params: dict, x_cls: np.ndarray, gt_boxes: np.ndarray):
    """Localised alignment through the box head; returns ``(loss, grads, dx_cls)``."""
    if len(x_cls) == 0:
        raise ValueError("localised alignment needs at least one concept")
    pred, cache = box_head_forward(params, x_cls, return_cache=True)
    loss, dpred = box_loss(gt_boxes, pred)
    grads, dx = box_head_backward(params, cache, dpred)
    return loss, grads, dx


# ---------------------------------------------------------------------------
# classification


def ce_loss(W: np.ndarray, b: np.ndarray, z: np.ndarray, labels: np.ndarray):
    """Softmax cross-entropy of ``z @ W.T + b``; returns ``(loss, grads, dz)``."""
    labels = np.asarray(labels)
    C = W.shape[0]
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    o = layers.linear(z, W, b)
    B = len(labels)
    logp = o - logsumexp(o, axis=1, keepdims=True)
    loss = -float(logp[np.arange(B), labels].mean())
    do = np.exp(logp)
    do[np.arange(B), labels] -= 1.0
    do /= B
    dz, dW, db = layers.linear_backward(do, z, W)
    return loss, {"clf.W": dW, "clf.b": db}, dz


# ---------------------------------------------------------------------------


COMPONENTS = ("itc", "itm", "la", "ce")


def total_loss(components: dict) -> float:
    """Unweighted sum of the present components; ``None`` marks an absent one."""
    total = 0.0
    for name in COMPONENTS:
        value = components.get(name)
        if value is None:
            continue
        if not math.isfinite(value):
            raise TrainingStepError(f"loss component {name} is not finite: {value}")
        total += value
    return total


def clamp_tau(tau: float) -> float:
    return min(max(tau, TAU_MIN), TAU_MAX)
