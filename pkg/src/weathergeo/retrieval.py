"""Euclidean ranking, Recall@K / AP, and per-weather retrieval reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .captions import CaptionStore
from .dataset import ToyWorld, render_views
from .model import ModelConfig, embed
from .weather import WeatherSpec, apply_weather

DIRECTIONS = ("D2S", "S2D")
NEUTRAL_SATELLITE_TEXT = "Visibility is high. Weather: clear. A satellite view of the area."


class ProtocolError(ValueError):
    """A query has no true match in the gallery."""


def rank_gallery(query: np.ndarray, gallery_ids: Sequence[int], gallery: np.ndarray) -> np.ndarray:
    """Gallery ids by ascending Euclidean distance; ties go to the smaller id."""
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if gallery.shape[0] == 0:
        raise ValueError("gallery is empty")
    ids = np.asarray(gallery_ids)
    dist = np.sqrt(np.sum((gallery - np.asarray(query)[None, :]) ** 2, axis=1))
    return ids[np.lexsort((ids, dist))]


def _check(ranking, truth) -> np.ndarray:
    hits = np.isin(np.asarray(ranking), list(truth))
    if not hits.any():
        raise ProtocolError("query has no true match in the gallery")
    return hits


def recall_at_k(rankings: Sequence[Sequence[int]], truths: Sequence[set], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = [bool(_check(r, t)[:k].any()) for r, t in zip(rankings, truths)]
    return 100.0 * sum(hits) / len(hits)


def average_precision(ranking: Sequence[int], truth: set) -> float:
    """Mean of the precision at each rank holding a true match."""
    hits = _check(ranking, truth)
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(rankings, truths) -> float:
    return 100.0 * float(np.mean([average_precision(r, t) for r, t in zip(rankings, truths)]))


# ---------------------------------------------------------------------------


@dataclass
class RetrievalReport:
    direction: str
    rows: list[dict] = field(default_factory=list)  # name, r1, r5, r10, ap (percent)

    METRICS = ("r1", "r5", "r10", "ap")

    @property
    def mean(self) -> dict:
        return {"name": "Mean", **{
            m: float(np.mean([r[m] for r in self.rows])) for m in self.METRICS
        }}

    def to_dict(self) -> dict:
        return {"direction": self.direction, "rows": self.rows, "mean": self.mean}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "RetrievalReport":
        return cls(data["direction"], [dict(r) for r in data["rows"]])

    def to_table(self) -> str:
        head = f"{self.direction:<12}" + "".join(f"{h:>9}" for h in ("R@1", "R@5", "R@10", "AP"))
        lines = [head]
        for r in self.rows + [self.mean]:
            lines.append(f"{r['name']:<12}" + "".join(f"{r[m]:>9.2f}" for m in self.METRICS))
        return "\n".join(lines)


def score(query_emb, query_labels, gallery_emb, gallery_labels, name: str) -> dict:
    gallery_ids = np.arange(len(gallery_labels))
    gallery_labels = np.asarray(gallery_labels)
    rankings, truths = [], []
    for q, lab in zip(query_emb, query_labels):
        rankings.append(rank_gallery(q, gallery_ids, gallery_emb))
        truths.append(set(np.flatnonzero(gallery_labels == lab).tolist()))
    return {
        "name": name,
        "r1": recall_at_k(rankings, truths, 1),
        "r5": recall_at_k(rankings, truths, 5),
        "r10": recall_at_k(rankings, truths, 10),
        "ap": mean_average_precision(rankings, truths),
    }


def _weather_seed(cond_index: int, loc: int, k: int) -> int:
    return 1_000_003 * (cond_index + 1) + 1009 * loc + k


def _texts(captions, locs, view, condition):
    out = []
    for loc in locs:
        try:
            out.append(captions.get(int(loc), view, condition).text)
        except KeyError as exc:
            raise ValueError(f"missing caption: location {loc}, {view}, {condition}") from exc
    return out


def evaluate(params: dict, model_cfg: ModelConfig, world: ToyWorld, captions: CaptionStore | None,
             direction: str, suite: list[tuple[str, WeatherSpec]], image_size: int = 64,
             satellite_text: str = "generated") -> RetrievalReport:
    """Score one direction on every condition of ``suite``.

    Drone images carry the condition's weather; satellite images stay clean.
    Text for each image comes from the caption store (or, for satellites with
    ``satellite_text="neutral_constant"``, a fixed clear-weather sentence).
    """
    direction = direction.upper()
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    sat_imgs = np.stack([render_views(s, "satellite", 0, image_size)[0] for s in world.scenes])
    sat_locs = np.array([s.location_id for s in world.scenes])
    drone_base, drone_locs, drone_keys = [], [], []
    for s in world.scenes:
        for k, j in enumerate(s.drone_jitter_seeds):
            drone_base.append(render_views(s, "drone", j, image_size)[0])
            drone_locs.append(s.location_id)
            drone_keys.append(k)
    drone_locs = np.array(drone_locs)

    sat_text = None
    if model_cfg.uses_text:
        if satellite_text == "neutral_constant":
            sat_text = [NEUTRAL_SATELLITE_TEXT] * len(sat_locs)
        else:
            sat_text = _texts(captions, sat_locs, "satellite", "Normal")
    sat_emb = embed(params, model_cfg, sat_imgs, sat_text)

    report = RetrievalReport(direction)
    for ci, (name, spec) in enumerate(suite):
        imgs = np.stack([
            apply_weather(img, spec.reseeded(_weather_seed(ci, int(loc), k)))
            for img, loc, k in zip(drone_base, drone_locs, drone_keys)
        ])
        d_text = _texts(captions, drone_locs, "drone", name) if model_cfg.uses_text else None
        drone_emb = embed(params, model_cfg, imgs, d_text)
        if direction == "D2S":
            report.rows.append(score(drone_emb, drone_locs, sat_emb, sat_locs, name))
        else:
            report.rows.append(score(sat_emb, sat_locs, drone_emb, drone_locs, name))
    return report
