"""SGD training loop: schedule, momentum step, batch assembly, checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, objectives
from .captions import CaptionStore
from .dataset import ToyWorld, clamp_box, render_views
from .model import ENCODER_PREFIXES, Batch, ModelConfig, init_params, loss_and_grads
from .weather import WeatherSpec, apply_weather

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "itc", "itm", "la", "ce", "total", "tau")


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 210
    # (epoch, factor relative to base_lr), ascending
    lr_drops: tuple[tuple[int, float], ...] = ((120, 0.1), (180, 0.01))
    batch_size: int = 32
    seed: int = 0
    freeze_encoders: bool = False
    checkpoint_every: int = 0
    max_steps: int | None = None
    augment: bool = True
    # step-size multiplier for the temperature; its raw gradient scales like
    # 1/tau^2, so an undamped step swings it across the whole clamp range
    tau_lr_scale: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        epochs = [e for e, _ in self.lr_drops]
        if epochs != sorted(epochs):
            raise ValueError("lr_drops must be sorted by epoch")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    factor = 1.0
    for start, f in cfg.lr_drops:
        if epoch >= start:
            factor = f
    return cfg.base_lr * factor


def sgd_step(params: dict, grads: dict, lr: float, momentum: float, weight_decay: float,
             state: dict, frozen: tuple[str, ...] = (), lr_scales: dict | None = None):
    """Classic momentum with coupled weight decay, in place.

    ``v <- momentum * v + (grad + weight_decay * param)``; ``param <- param - lr * v``.
    ``lr_scales`` optionally multiplies the step of named tensors. The
    temperature is not decayed and is clamped after the update.
    """
    lr_scales = lr_scales or {}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise objectives.TrainingStepError(f"non-finite gradient for {name}")
    for name, p in params.items():
        if frozen and name.startswith(frozen):
            continue
        g = grads[name]
        if name != "tau":
            g = g + weight_decay * p
        v = state.get(name)
        state[name] = g.copy() if v is None else momentum * v + g
        p -= lr * lr_scales.get(name, 1.0) * state[name]
    if "tau" in params:
        params["tau"][0] = objectives.clamp_tau(float(params["tau"][0]))
    return params, state


# ---------------------------------------------------------------------------
# data


class TrainingSet:
    """Cached clean renders of a toy world, ready for augmentation."""

    def __init__(self, world: ToyWorld, image_size: int = 64):
        self.world = world
        self.image_size = image_size
        self.satellite = [render_views(s, "satellite", 0, image_size) for s in world.scenes]
        self.drone = [
            [render_views(s, "drone", j, image_size) for j in s.drone_jitter_seeds]
            for s in world.scenes
        ]

    @property
    def num_locations(self) -> int:
        return len(self.satellite)

    @property
    def num_drone_images(self) -> int:
        return sum(len(d) for d in self.drone)


def crop_flip(image: np.ndarray, boxes: np.ndarray, rng: np.random.Generator, pad: int):
    """Random translate-crop (edge padded) and horizontal flip, applied to boxes too."""
    H, W, _ = image.shape
    ox, oy = rng.integers(0, 2 * pad + 1, size=2)
    flip = rng.random() < 0.5
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = padded[oy:oy + H, ox:ox + W]
    dx, dy = (pad - ox) / W, (pad - oy) / H
    new = []
    for cx, cy, w, h in np.atleast_2d(boxes):
        cx, cy = cx + dx, cy + dy
        box = clamp_box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        new.append(box)
    new = np.array(new).reshape(-1, 4)
    if flip:
        out = out[:, ::-1]
        new[:, 0] = 1.0 - new[:, 0]
    return np.ascontiguousarray(out), new


def build_batch(data: TrainingSet, captions: CaptionStore | None,
                suite: list[tuple[str, WeatherSpec]], rng: np.random.Generator,
                batch_size: int, text_mode=6, augment: bool = True) -> Batch:
    """Assemble one batch of distinct locations.

    Drone images get a uniformly drawn weather condition and then crop/flip;
    satellite images get crop/flip only. Hint boxes follow the drone image
    through its own view transform and augmentation.
    """
    B = min(batch_size, data.num_locations)
    locs = rng.choice(data.num_locations, size=B, replace=False)
    pad = max(1, data.image_size // 16)
    drones, sats, conds = [], [], []
    d_text, s_text, h_text, h_boxes = [], [], [], []
    for loc in locs:
        loc = int(loc)
        k = int(rng.integers(len(data.drone[loc])))
        c = int(rng.integers(len(suite)))
        wseed = int(rng.integers(2**31 - 1))
        name, spec = suite[c]
        img, regions = data.drone[loc][k]
        img = apply_weather(img, spec.reseeded(wseed))
        rec = None
        if text_mode != "NAN":
            try:
                rec = captions.get(loc, "drone", name)
                sat_rec = captions.get(loc, "satellite", "Normal")
            except (KeyError, AttributeError) as exc:
                raise ValueError(f"missing caption for training item: location {loc}, {name}") from exc
            by_id = {r.object_id: r.box for r in regions}
            boxes = np.array([by_id[i] for i in rec.region_object_ids])
        else:
            boxes = np.zeros((0, 4))
        sat = data.satellite[loc][0]
        if augment:
            img, boxes = crop_flip(img, boxes, rng, pad)
            sat, _ = crop_flip(sat, np.zeros((0, 4)), rng, pad)
        drones.append(img)
        sats.append(sat)
        conds.append(name)
        if rec is not None:
            d_text.append(rec.text)
            s_text.append(sat_rec.text)
            h_text.append(list(rec.region_hints))
            h_boxes.append(boxes)
    batch = Batch(np.stack(drones), np.stack(sats), locs.astype(int))
    if text_mode != "NAN":
        batch.drone_text, batch.satellite_text = d_text, s_text
        batch.hint_text, batch.hint_boxes = h_text, np.stack(h_boxes)
    batch.conditions = conds
    return batch


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    params: dict
    state: dict
    history: list[dict] = field(default_factory=list)
    epoch: int = 0
    steps: int = 0


def format_log_line(record: dict) -> str:
    parts = []
    for key in LOG_FIELDS:
        v = record.get(key)
        parts.append(f"{key}={'NA' if v is None else repr(v)}")
    return " ".join(parts)


def parse_log_line(line: str) -> dict:
    out = {}
    for item in line.split():
        k, v = item.split("=", 1)
        out[k] = None if v == "NA" else (int(v) if k == "step" else float(v))
    return out


def steps_per_epoch(data: TrainingSet, batch_size: int) -> int:
    return math.ceil(data.num_drone_images / min(batch_size, data.num_locations))


def _meta(cfg: TrainConfig, model_cfg: ModelConfig, epoch: int, steps: int,
          extra: dict | None = None) -> dict:
    conf = {"train": asdict(cfg), "model": asdict(model_cfg)}
    return {**(extra or {}), "epoch": epoch, "steps": steps,
            "fingerprint": checkpoint.fingerprint(conf), "model": asdict(model_cfg)}


def train(cfg: TrainConfig, model_cfg: ModelConfig, data: TrainingSet,
          captions: CaptionStore | None, suite: list[tuple[str, WeatherSpec]],
          out_dir=None, resume_from=None, meta: dict | None = None) -> TrainResult:
    """Run SGD; reproducible for a fixed config on a single thread.

    Each epoch draws batches from an RNG seeded by ``(seed, epoch)``, so a
    run resumed from an epoch checkpoint follows the uninterrupted trajectory.
    ``meta`` is copied into every checkpoint header.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        params, state, meta = checkpoint.load_checkpoint(resume_from)
        start_epoch, steps = meta["epoch"], meta["steps"]
    else:
        params = init_params(model_cfg, np.random.default_rng([cfg.seed, 0]))
        state, start_epoch, steps = {}, 0, 0
    frozen = ENCODER_PREFIXES if cfg.freeze_encoders else ()
    per_epoch = steps_per_epoch(data, cfg.batch_size)
    result = TrainResult(params, state, [], start_epoch, steps)
    logf = (out / "train.log").open("a") if out is not None else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_at(cfg, epoch)
            rng = np.random.default_rng([cfg.seed, 1, epoch])
            for _ in range(per_epoch):
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
                batch = build_batch(data, captions, suite, rng, cfg.batch_size,
                                    model_cfg.text_mode, cfg.augment)
                comps, grads = loss_and_grads(params, batch, model_cfg)
                try:
                    total = objectives.total_loss(comps)
                    sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, state, frozen,
                             {"tau": cfg.tau_lr_scale})
                except objectives.TrainingStepError:
                    if out is not None:
                        log.error("aborting at step %d; last good checkpoint kept", steps)
                    raise
                steps += 1
                rec = {"step": steps, "lr": lr, **comps, "total": total,
                       "tau": float(params["tau"][0]) if "tau" in params else None}
                result.history.append(rec)
                if logf is not None:
                    logf.write(format_log_line(rec) + "\n")
            result.epoch, result.steps = epoch + 1, steps
            done = epoch + 1 == cfg.epochs or (cfg.max_steps is not None and steps >= cfg.max_steps)
            if out is not None and (done or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0)):
                checkpoint.save_checkpoint(out / f"ckpt_epoch_{epoch + 1}", params, state,
                                           _meta(cfg, model_cfg, epoch + 1, steps, meta))
            if done:
                break
    finally:
        if logf is not None:
            logf.close()
    return result
