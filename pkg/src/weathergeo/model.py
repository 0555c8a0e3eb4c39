"""The full multimodal model: parameters, batch loss with gradients, embeddings.

A training batch holds ``B`` locations, each with one drone image and one
satellite image. Both views are classified; the contrastive, matching and
box losses use the drone image-text pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encoders, fusion, layers, objectives
from .encoders import EncoderConfig

TEXT_MODES = ("NAN", 0, 2, 4, 6)
ENCODER_PREFIXES = ("vis.", "txt.", "joint.")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    num_classes: int = 16
    fusion_mode: str = "dynamic"
    reduction_ratio: int = 4
    text_mode: object = 6  # "NAN" or a CoT step count
    tau_init: float = 0.07

    def __post_init__(self):
        if self.fusion_mode not in fusion.MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.text_mode not in TEXT_MODES:
            raise ValueError(f"text mode must be one of {TEXT_MODES}, got {self.text_mode!r}")

    @property
    def uses_text(self) -> bool:
        return self.text_mode != "NAN"

    @property
    def fused_dim(self) -> int:
        D = self.encoder.embed_dim
        return 2 * D if self.uses_text and self.fusion_mode == "concat" else D


@dataclass
class Batch:
    drone: np.ndarray  # B x H x W x 3
    satellite: np.ndarray
    labels: np.ndarray
    drone_text: list[str] | None = None
    satellite_text: list[str] | None = None
    hint_text: list[list[str]] | None = None  # B x 3
    hint_boxes: np.ndarray | None = None  # B x 3 x 4
    conditions: list[str] | None = None


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    enc = cfg.encoder
    params = encoders.init_encoder_params(enc, rng)
    if not cfg.uses_text:
        params = {k: v for k, v in params.items() if k.startswith("vis.")}
    else:
        d = enc.d
        if cfg.fusion_mode == "dynamic":
            params.update(fusion.init_gate_params(enc.embed_dim, cfg.reduction_ratio, rng))
        params.update({
            "itm.w": layers.uniform_init(rng, (d,), d), "itm.b": np.zeros(1),
            "loc.W1": layers.uniform_init(rng, (2 * d, d), d), "loc.b1": np.zeros(2 * d),
            "loc.W2": layers.uniform_init(rng, (4, 2 * d), 2 * d), "loc.b2": np.zeros(4),
            "tau": np.array([cfg.tau_init]),
        })
    F = cfg.fused_dim
    params["clf.W"] = layers.uniform_init(rng, (cfg.num_classes, F), F)
    params["clf.b"] = np.zeros(cfg.num_classes)
    return dict(sorted(params.items()))


def _fuse_forward(params, cfg: ModelConfig, f_I, f_T):
    if cfg.fusion_mode == "concat":
        return np.concatenate([f_I, f_T], axis=1), None
    if cfg.fusion_mode == "static":
        g = np.full(f_I.shape, 0.5)
        return fusion.fuse(f_I, f_T, g), (g, None)
    gp = fusion.GateParams.from_dict(params)
    g, cache = fusion.gate_forward(gp, f_T, return_cache=True)
    return fusion.fuse(f_I, f_T, g), (g, cache)


def loss_and_grads(params: dict, batch: Batch, cfg: ModelConfig, need_grads: bool = True):
    """Per-component losses and the gradient of their sum.

    Absent components (no text) are reported as ``None``.
    """
    B = len(batch.labels)
    enc = cfg.encoder
    images = np.concatenate([batch.drone, batch.satellite], axis=0)
    labels = np.concatenate([batch.labels, batch.labels])
    vc = encoders.image_forward(params, images, enc.patch_size)
    grads = {k: np.zeros_like(v) for k, v in params.items()} if need_grads else {}

    def acc(part: dict):
        for k, v in part.items():
            grads[k] += v

    if not cfg.uses_text:
        ce, g_ce, dz = objectives.ce_loss(params["clf.W"], params["clf.b"], vc.f, labels)
        comps = {"itc": None, "itm": None, "la": None, "ce": ce}
        if need_grads:
            acc(g_ce)
            acc(encoders.image_backward(params, vc, df=dz))
        return comps, grads

    tc = encoders.text_forward(params, list(batch.drone_text) + list(batch.satellite_text))
    fused, gate_state = _fuse_forward(params, cfg, vc.f, tc.f)
    ce, g_ce, dfused = objectives.ce_loss(params["clf.W"], params["clf.b"], fused, labels)

    tau = float(params["tau"][0])
    f_Id, f_Td = vc.f[:B], tc.f[:B]
    itc, dI, dT, dtau = objectives.itc_loss(f_Id, f_Td, tau)

    S = objectives.similarity_matrix(f_Id, f_Td, tau)
    text_neg, image_neg = objectives.mine_hard_negatives(S)
    img_idx, txt_idx, itm_labels = objectives.itm_pairs(text_neg, image_neg)
    jc = encoders.joint_forward(params, vc.v[img_idx], tc.t[txt_idx])
    itm, g_itm, dh_itm = objectives.itm_loss(params["itm.w"], params["itm.b"][0], jc.h, itm_labels)

    hints = [h for row in batch.hint_text for h in row]
    hc = encoders.text_forward(params, hints)
    k = len(batch.hint_text[0])
    la_img = np.repeat(np.arange(B), k)
    lc = encoders.joint_forward(params, vc.v[la_img], hc.t)
    gt = np.asarray(batch.hint_boxes, dtype=np.float64).reshape(-1, 4)
    la, g_la, dx_cls = objectives.la_loss(params, lc.h, gt)

    comps = {"itc": itc, "itm": itm, "la": la, "ce": ce}
    if not need_grads:
        return comps, grads

    acc(g_ce)
    acc(g_itm)
    acc(g_la)
    grads["tau"][0] += dtau

    df_I = np.zeros_like(vc.f)
    df_T = np.zeros_like(tc.f)
    dv = np.zeros_like(vc.v)
    dt = np.zeros_like(tc.t)

    D = enc.embed_dim
    if cfg.fusion_mode == "concat":
        df_I += dfused[:, :D]
        df_T += dfused[:, D:]
    else:
        g, gcache = gate_state
        a, b, dg = fusion.fuse_backward(dfused, vc.f, tc.f, g)
        df_I += a
        df_T += b
        if gcache is not None:
            g_gate, df_T_gate = fusion.gate_backward(fusion.GateParams.from_dict(params), gcache, dg)
            acc(g_gate)
            df_T += df_T_gate
    df_I[:B] += dI
    df_T[:B] += dT

    g_j, dv_j, dt_j = encoders.joint_backward(params, jc, dh_itm)
    acc(g_j)
    np.add.at(dv, img_idx, dv_j)
    np.add.at(dt, txt_idx, dt_j)

    g_j, dv_l, dth = encoders.joint_backward(params, lc, dx_cls)
    acc(g_j)
    np.add.at(dv, la_img, dv_l)

    acc(encoders.image_backward(params, vc, df=df_I, dv=dv))
    acc(encoders.text_backward(params, tc, df=df_T, dt=dt))
    acc(encoders.text_backward(params, hc, dt=dth))
    return comps, grads


def embed(params: dict, cfg: ModelConfig, images, texts: Sequence[str] | None = None,
          batch_size: int = 256) -> np.ndarray:
    """Unit-norm retrieval embeddings (the fused feature, or visual-only without text)."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    for s in range(0, len(images), batch_size):
        f_I = encoders.image_forward(params, images[s:s + batch_size], cfg.encoder.patch_size).f
        if cfg.uses_text:
            f_T = encoders.text_forward(params, list(texts[s:s + batch_size])).f
            f_I = _fuse_forward(params, cfg, f_I, f_T)[0]
        out.append(layers.l2_normalize(f_I)[0])
    return np.concatenate(out, axis=0)
