"""Parametric, seeded weather corruption of ``H x W x 3`` images in ``[0, 1]``.

Each layer kind is a pure function of ``(image, intensity, seed)`` and is an
exact no-op at intensity 0. Composite conditions apply their layers in the
listed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

KINDS = ("fog", "rain", "snow", "dark", "overexposure", "wind")
FOG_COLOUR = np.array([0.80, 0.80, 0.82])
RAIN_COLOUR = np.array([0.82, 0.84, 0.90])
DEFAULT_INTENSITY = 0.5

_ALIASES = {
    "normal": (), "clear": (),
    "fog": ("fog",), "rain": ("rain",), "snow": ("snow",),
    "dark": ("dark",), "night": ("dark",),
    "over-exp": ("overexposure",), "overexposure": ("overexposure",),
    "wind": ("wind",),
}


@dataclass(frozen=True)
class WeatherLayer:
    kind: str
    intensity: float
    layer_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weather kind {self.kind!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")


@dataclass(frozen=True)
class WeatherSpec:
    layers: tuple[WeatherLayer, ...] = field(default_factory=tuple)

    @property
    def is_normal(self) -> bool:
        return not self.layers

    def reseeded(self, seed: int) -> "WeatherSpec":
        """Same layers with per-layer seeds derived from ``seed``."""
        return WeatherSpec(tuple(
            replace(layer, layer_seed=int(seed) * 16 + i) for i, layer in enumerate(self.layers)
        ))

    def to_dict(self) -> dict:
        return {"layers": [
            {"kind": l.kind, "intensity": l.intensity, "seed": l.layer_seed} for l in self.layers
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "WeatherSpec":
        return cls(tuple(
            WeatherLayer(d["kind"], float(d["intensity"]), int(d.get("seed", 0)))
            for d in data.get("layers", [])
        ))


def load_spec(path) -> WeatherSpec:
    """Read a JSON spec file: ``{"layers": [{"kind", "intensity", "seed"}, ...]}``."""
    return WeatherSpec.from_dict(json.loads(Path(path).read_text()))


def parse_condition(name: str, intensity: float = DEFAULT_INTENSITY) -> WeatherSpec:
    """Turn ``"Fog+Rain"``-style names into a spec, keeping the listed order."""
    kinds: list[str] = []
    for part in name.split("+"):
        key = part.strip().lower()
        if key not in _ALIASES:
            raise ValueError(f"unknown weather condition component {part!r}")
        kinds.extend(_ALIASES[key])
    return WeatherSpec(tuple(WeatherLayer(k, intensity, i) for i, k in enumerate(kinds)))


SUITE_NAMES = (
    "Normal", "Fog", "Rain", "Snow", "Fog+Rain", "Fog+Snow", "Rain+Snow", "Dark", "Over-exp", "Wind",
)


def condition_suite(intensity: float = DEFAULT_INTENSITY) -> list[tuple[str, WeatherSpec]]:
    """The ten evaluation conditions, in table column order."""
    return [(name, parse_condition(name, intensity)) for name in SUITE_NAMES]


# --------------------------------------------------------------------------
# layer mechanisms


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int = 4) -> np.ndarray:
    coarse = rng.random((cells + 1, cells + 1))
    out = ndimage.zoom(coarse, (h / (cells + 1), w / (cells + 1)), order=1, mode="nearest")
    return np.clip(out[:h, :w], 0.0, 1.0)


def _fog(img, t, rng):
    h, w, _ = img.shape
    alpha = t * (0.7 + 0.3 * _smooth_noise(rng, h, w))
    return img + alpha[..., None] * (FOG_COLOUR - img)


def _draw_segments(h, w, x0, y0, dx, dy, n_points):
    """Rasterise segments into a boolean mask by dense sampling."""
    mask = np.zeros((h, w), dtype=bool)
    if len(x0) == 0:
        return mask
    s = np.linspace(0.0, 1.0, n_points)
    xs = np.round(x0[:, None] + s[None, :] * dx[:, None]).astype(int).ravel()
    ys = np.round(y0[:, None] + s[None, :] * dy[:, None]).astype(int).ravel()
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    mask[ys[keep], xs[keep]] = True
    return mask


def _rain(img, t, rng):
    h, w, _ = img.shape
    max_streaks = max(8, h * w // 64)
    x0 = rng.uniform(0, w, max_streaks)
    y0 = rng.uniform(-0.2 * h, h, max_streaks)
    length = rng.uniform(0.06, 0.14, max_streaks) * h
    n = int(round(t * max_streaks))
    slant = 0.3
    mask = _draw_segments(h, w, x0[:n], y0[:n], slant * length[:n], length[:n], 12)
    out = img * (1.0 - 0.15 * t)
    out[mask] = out[mask] + 0.65 * (RAIN_COLOUR - out[mask])
    return out


def _snow(img, t, rng):
    h, w, _ = img.shape
    max_flakes = max(8, h * w // 24)
    xs = rng.uniform(0, w, max_flakes)
    ys = rng.uniform(0, h, max_flakes)
    big = rng.random(max_flakes) < 0.3
    n = int(round(t * max_flakes))
    mask = np.zeros((h, w), dtype=bool)
    xi, yi = np.clip(xs[:n].astype(int), 0, w - 1), np.clip(ys[:n].astype(int), 0, h - 1)
    mask[yi, xi] = True
    b = big[:n]
    mask[np.clip(yi[b] + 1, 0, h - 1), xi[b]] = True
    mask[yi[b], np.clip(xi[b] + 1, 0, w - 1)] = True
    out = img + 0.12 * t * (1.0 - img)
    out[mask] = out[mask] + 0.85 * (1.0 - out[mask])
    return out


def _dark(img, t, rng):
    gamma = 1.0 + 1.5 * t
    gain = 1.0 - 0.7 * t
    return gain * np.power(img, gamma)


def _overexposure(img, t, rng):
    return np.clip(img * (1.0 + 1.5 * t) + 0.25 * t, 0.0, 1.0)


def _wind(img, t, rng):
    length = 1 + int(round(8 * t))
    if length <= 1:
        return img.copy()
    angle = rng.uniform(-math.pi / 8, math.pi / 8)
    size = 2 * length + 1
    kernel = np.zeros((size, size))
    for s in np.linspace(-length / 2, length / 2, 4 * length):
        kernel[int(round(length + s * math.sin(angle))), int(round(length + s * math.cos(angle)))] = 1.0
    kernel /= kernel.sum()
    return np.stack(
        [ndimage.convolve(img[..., c], kernel, mode="nearest") for c in range(3)], axis=-1
    )


_LAYERS = {
    "fog": _fog, "rain": _rain, "snow": _snow,
    "dark": _dark, "overexposure": _overexposure, "wind": _wind,
}


def apply_weather(image: np.ndarray, spec: WeatherSpec) -> np.ndarray:
    """Apply ``spec``'s layers in order; the result is clipped to ``[0, 1]``."""
    out = np.array(image, dtype=np.float64, copy=True)
    for layer in spec.layers:
        if not 0.0 <= layer.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {layer.intensity}")
        if layer.intensity == 0.0:
            continue
        rng = np.random.default_rng([layer.layer_seed, KINDS.index(layer.kind)])
        out = np.clip(_LAYERS[layer.kind](out, layer.intensity, rng), 0.0, 1.0)
    return out
