"""Two-phase chain-of-thought captioning with validation and regeneration.

The weather phase reasons from global visibility through local atmospheric
cues to a weather label; the spatial phase, prefixed with that label, moves
from macro layout through structural elements to relative positions. Each
phase can be collapsed into fewer prompts (``step_count`` 0, 2, 4 or 6).

Vision-language models sit behind :class:`LvlmClient`. :class:`MockLvlmClient`
answers from toy-scene facts so the whole pipeline runs offline.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import GroundTruthRegion
from .weather import WeatherSpec

STEP_COUNTS = (0, 2, 4, 6)

UNCERTAINTY_TERMS = (
    "possibly", "uncertain", "perhaps", "maybe", "might be", "unclear", "probably",
)
CUE_TERMS = (
    "fog", "haze", "mist", "diffusion", "rain", "streak", "drizzle", "snow", "flake",
    "dim", "dark", "night", "shadow", "sunlight", "clear sky", "glare", "overexposed",
    "washed-out", "highlight", "blur", "wind", "gust",
)

# ---------------------------------------------------------------------------
# prompts


@dataclass(frozen=True)
class Prompt:
    key: str
    phase: str  # weather | spatial | oneshot
    text: str


_WEATHER_STEPS = {
    "visibility": (
        "Step: global perception. Look at the whole aerial image and state how far "
        "the ground is visible. Begin the answer with 'Visibility is'."
    ),
    "cues": (
        "Step: local analysis. List the local atmospheric cues you can see, such as "
        "rain streaks, fog diffusion, snowflakes, glare or darkness."
    ),
    "label": (
        "Step: synthesis. Combine the visibility and the cues and give one weather "
        "label in the form 'Weather: <label>'. Do not hedge."
    ),
}
_SPATIAL_STEPS = {
    "layout": (
        "Step: macro layout. Describe where buildings are concentrated, which way "
        "roads run, and how much of the area is open space."
    ),
    "elements": (
        "Step: structural elements. Count the buildings, roads, ponds and fields and "
        "describe their colours and shapes."
    ),
    "relations": (
        "Step: topology. State the relative positions of the largest objects using "
        "compass directions."
    ),
}
_ONESHOT = (
    "Describe the weather and the scene in this aerial image in one or two sentences. "
    "Mention visibility and give 'Weather: <label>'."
)


def build_prompts(cfg: "CotConfig") -> list[Prompt]:
    """Ordered prompts for a step count: 0 is one-shot, 2/4/6 split each phase."""
    n = cfg.step_count
    if n not in STEP_COUNTS:
        raise ValueError(f"step_count must be one of {STEP_COUNTS}, got {n}")
    if n == 0:
        return [Prompt("oneshot", "oneshot", _ONESHOT)]
    w, s = _WEATHER_STEPS, _SPATIAL_STEPS
    if n == 2:
        groups = [("weather", ("visibility", "cues", "label")), ("spatial", ("layout",))]
    elif n == 4:
        groups = [
            ("weather", ("visibility", "cues")), ("weather", ("label",)),
            ("spatial", ("layout",)), ("spatial", ("elements",)),
        ]
    else:
        groups = [("weather", (k,)) for k in w] + [("spatial", (k,)) for k in s]
    prompts = []
    for phase, keys in groups:
        table = w if phase == "weather" else s
        text = " ".join(table[k] for k in keys)
        prompts.append(Prompt(f"{phase}.{'+'.join(keys)}", phase, text))
    return prompts


def condition_prompt(prompt: Prompt, weather_label: str) -> Prompt:
    """Prefix a spatial prompt with the weather prior from the first phase."""
    prefix = f"The weather in this image is {weather_label}. Taking that into account: "
    return Prompt(prompt.key, prompt.phase, prefix + prompt.text)


# ---------------------------------------------------------------------------
# clients


class LvlmClient(Protocol):
    def complete(self, image: np.ndarray, prompts: Sequence[Prompt],
                 context: dict | None = None) -> list[str]:
        """Return one answer per prompt. ``context`` is ignored by real models."""


_VIS_LEVELS = ((0.25, "very low"), (0.5, "low"), (0.75, "moderate"), (2.0, "high"))


def _weather_profile(spec: WeatherSpec) -> dict:
    strength = {k: 0.0 for k in ("fog", "rain", "snow", "dark", "overexposure", "wind")}
    for layer in spec.layers:
        strength[layer.kind] = max(strength[layer.kind], layer.intensity)
    loss = max(strength["fog"] * 0.9, strength["dark"] * 0.8, strength["snow"] * 0.5,
               strength["rain"] * 0.4, strength["overexposure"] * 0.5, strength["wind"] * 0.2)
    vis = 1.0 - loss
    level = next(name for bound, name in _VIS_LEVELS if vis < bound)
    names = {"fog": "fog", "rain": "rain", "snow": "snow", "dark": "night",
             "overexposure": "overexposure", "wind": "wind"}
    active = [names[l.kind] for l in spec.layers if l.intensity > 0]
    label = " with ".join(dict.fromkeys(active)) if active else "clear"
    return {"strength": strength, "visibility": level, "label": label}


def _grade(x: float) -> str:
    return "heavy" if x >= 0.7 else ("moderate" if x >= 0.35 else "light")


_CUE_PHRASES = {
    "fog": "fog diffusion softens distant edges",
    "rain": "thin rain streaks cross the frame",
    "snow": "snowflakes speckle the ground",
    "dark": "dim night lighting flattens colours",
    "overexposure": "overexposed highlights wash out the roofs",
    "wind": "motion blur from wind gusts smears edges",
}


class MockLvlmClient:
    """Deterministic stand-in that answers from scene facts and the applied weather.

    ``context`` must carry ``facts`` (a toy-scene fact dict) and ``weather``
    (the :class:`WeatherSpec` that produced the image). Answers depend only on
    those and the prompt keys.
    """

    def complete(self, image, prompts, context=None):
        context = context or {}
        facts = context.get("facts", {})
        weather = context.get("weather", WeatherSpec())
        return [self._answer(p.key, facts, weather) for p in prompts]

    def _answer(self, key: str, facts: dict, weather: WeatherSpec) -> str:
        if key == "oneshot":
            return self._oneshot(facts, weather)
        phase, _, steps = key.partition(".")
        parts = []
        for step in steps.split("+"):
            parts.append(self._step(phase, step, facts, weather))
        return " ".join(parts)

    def _oneshot(self, facts, weather):
        prof = _weather_profile(weather)
        vis = "reduced" if prof["visibility"] in ("low", "very low") else "good"
        kind = prof["label"].split(" with ")[0]
        cue = "haze" if kind != "clear" else "clear sky"
        n = facts.get("counts", {}).get("building", 0)
        return (f"Weather: {kind}. Visibility is {vis}, with {cue}. "
                f"An aerial view with {n} buildings.")

    def _step(self, phase, step, facts, weather):
        prof = _weather_profile(weather)
        st = prof["strength"]
        if phase == "weather":
            if step == "visibility":
                return f"Visibility is {prof['visibility']}."
            if step == "cues":
                cues = [f"{_grade(v)} {_CUE_PHRASES[k]}" for k, v in st.items() if v > 0]
                if not cues:
                    cues = ["crisp shadows under a clear sky"]
                return "Cues: " + "; ".join(cues) + "."
            if step == "label":
                return f"Weather: {prof['label']}."
        counts = facts.get("counts", {})
        if step == "layout":
            roads = facts.get("road_orientations", [])
            road_txt = ("roads run " + " and ".join(sorted(set(roads)))) if roads else "no roads"
            return (f"Layout: buildings cluster in the {facts.get('building_cluster', 'centre')}; "
                    f"{road_txt}; open space covers about {facts.get('open_space_pct', 0)} percent.")
        if step == "elements":
            colours = ", ".join(facts.get("building_colours", []))
            return (f"Elements: {counts.get('building', 0)} buildings ({colours}), "
                    f"{counts.get('road', 0)} roads, {counts.get('pond', 0)} ponds, "
                    f"{counts.get('field', 0)} fields; the largest building is "
                    f"{facts.get('largest_building_shape', 'none')}.")
        if step == "relations":
            rel = facts.get("relations", [])
            return "Relations: " + ("; ".join(rel) if rel else "no notable relations") + "."
        raise KeyError(f"unknown prompt step {phase}.{step}")


class ScriptedClient:
    """Replays fixed answer lists, one list per call; the last one repeats."""

    def __init__(self, scripts: Sequence[Sequence[str]]):
        self.scripts = [list(s) for s in scripts]
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, image, prompts, context=None):
        with self._lock:
            script = self.scripts[min(self.calls, len(self.scripts) - 1)]
            self.calls += 1
        return [script[i % len(script)] for i in range(len(prompts))]


class HttpLvlmClient:
    """OpenAI-compatible chat endpoint; configured from the environment.

    ``WEATHERGEO_LVLM_ENDPOINT`` is the chat-completions URL,
    ``WEATHERGEO_LVLM_KEY`` the bearer token and ``WEATHERGEO_LVLM_MODEL`` the
    model name. Prompts are sent as one multi-turn conversation so later
    steps see earlier answers.
    """

    def __init__(self, endpoint: str | None = None, key: str | None = None,
                 model: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint or os.environ.get("WEATHERGEO_LVLM_ENDPOINT")
        if not self.endpoint:
            raise ValueError("no LVLM endpoint configured (WEATHERGEO_LVLM_ENDPOINT)")
        self.key = key or os.environ.get("WEATHERGEO_LVLM_KEY", "")
        self.model = model or os.environ.get("WEATHERGEO_LVLM_MODEL", "default")
        self.timeout = timeout

    def complete(self, image, prompts, context=None):
        import base64
        import io
        import urllib.request

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.round(np.asarray(image) * 255).astype(np.uint8)).save(buf, "PNG")
        data_url = "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()
        messages, answers = [], []
        for i, p in enumerate(prompts):
            content = [{"type": "text", "text": p.text}]
            if i == 0:
                content.insert(0, {"type": "image_url", "image_url": {"url": data_url}})
            messages.append({"role": "user", "content": content})
            body = json.dumps({"model": self.model, "messages": messages}).encode()
            req = urllib.request.Request(self.endpoint, data=body, headers={
                "Content-Type": "application/json", "Authorization": f"Bearer {self.key}",
            })
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = json.loads(resp.read())["choices"][0]["message"]["content"]
            messages.append({"role": "assistant", "content": text})
            answers.append(text)
        return answers


# ---------------------------------------------------------------------------
# validation


@dataclass
class CotConfig:
    step_count: int = 6
    max_retries: int = 3
    uncertainty_terms: tuple[str, ...] = UNCERTAINTY_TERMS
    cue_terms: tuple[str, ...] = CUE_TERMS

    def __post_init__(self):
        if self.step_count not in STEP_COUNTS:
            raise ValueError(f"step_count must be one of {STEP_COUNTS}, got {self.step_count}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")


@dataclass
class ValidationReport:
    accepted: bool
    reasons: list[str]
    visibility_clause: str = ""
    weather_label: str = ""


_LABEL_RE = re.compile(r"\bweather(?:\s+label)?\s*[:=]\s*([a-z][a-z \-+]*[a-z])", re.I)
_SENTENCE_RE = re.compile(r"[^.;,\n]*\bvisibility\b[^.;,\n]*", re.I)


def _contains_term(text: str, term: str) -> bool:
    return re.search(r"(?<![a-z])" + re.escape(term), text) is not None


def validate_caption(text: str, cfg: CotConfig | None = None) -> ValidationReport:
    """Check weather-phase text for visibility, cues, certainty and a label."""
    cfg = cfg or CotConfig()
    low = text.lower()
    reasons = []
    vis = _SENTENCE_RE.search(text)
    if vis is None:
        reasons.append("missing visibility")
    if not any(_contains_term(low, t) for t in cfg.cue_terms):
        reasons.append("missing meteorological cue")
    bad = [t for t in cfg.uncertainty_terms if _contains_term(low, t)]
    if bad:
        reasons.append("uncertainty term: " + ", ".join(bad))
    label = _LABEL_RE.search(text)
    if label is None:
        reasons.append("missing weather label")
    return ValidationReport(
        accepted=not reasons,
        reasons=reasons,
        visibility_clause=vis.group(0).strip() if vis else "",
        weather_label=label.group(1).strip().lower() if label else "",
    )


# ---------------------------------------------------------------------------
# records


@dataclass
class CaptionRecord:
    location_id: int
    image_ref: str
    view: str = "drone"
    condition: str = "Normal"
    cot_steps: int = 6
    weather_text: str = ""
    visibility_clause: str = ""
    weather_label: str = ""
    spatial_text: str = ""
    region_hints: list[str] = field(default_factory=list)
    region_boxes: list[list[float]] = field(default_factory=list)
    region_object_ids: list[int] = field(default_factory=list)
    attempts: int = 0
    status: str = "rejected_exhausted"

    @property
    def text(self) -> str:
        """Global description: weather phase followed by spatial phase."""
        if self.cot_steps == 0:
            # one-shot answers already hold the scene sentences
            return self.weather_text
        return f"{self.weather_text} {self.spatial_text}".strip()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CaptionRecord":
        return cls(**json.loads(line))


def extract_region_hints(regions: Sequence[GroundTruthRegion]) -> list[GroundTruthRegion]:
    """The three largest regions, by area descending; ties go to smaller (cx, cy)."""
    if len(regions) < 3:
        raise ValueError(f"need at least 3 regions, got {len(regions)}")
    ranked = sorted(regions, key=lambda r: (-r.area, r.box[0], r.box[1]))
    return list(ranked[:3])


def _scene_sentences(text: str) -> str:
    """Sentences of a one-shot answer that are not about weather or visibility."""
    sentences = [x.strip() for x in re.split(r"(?<=\.)\s+", text) if x.strip()]
    scene = [x for x in sentences if not re.search(r"weather|visibility", x, re.I)]
    return " ".join(scene) or text


def generate_caption_record(image, facts: dict | None, client: LvlmClient, cfg: CotConfig, *,
                            location_id: int = 0, image_ref: str = "", view: str = "drone",
                            condition: str = "Normal", weather: WeatherSpec | None = None,
                            regions: Sequence[GroundTruthRegion] | None = None) -> CaptionRecord:
    """Query, validate and (if needed) regenerate until accepted or out of retries."""
    prompts = build_prompts(cfg)
    context = {"facts": facts or {}, "weather": weather or WeatherSpec()}
    record = CaptionRecord(location_id, image_ref, view, condition, cfg.step_count)
    weather_prompts = [p for p in prompts if p.phase in ("weather", "oneshot")]
    spatial_prompts = [p for p in prompts if p.phase == "spatial"]
    for attempt in range(1, cfg.max_retries + 1):
        record.attempts = attempt
        weather_text = " ".join(client.complete(image, weather_prompts, context)).strip()
        report = validate_caption(weather_text, cfg)
        if not report.accepted:
            continue
        spatial_text = ""
        if spatial_prompts:
            conditioned = [condition_prompt(p, report.weather_label) for p in spatial_prompts]
            spatial_text = " ".join(client.complete(image, conditioned, context)).strip()
        if cfg.step_count == 0:
            spatial_text = _scene_sentences(weather_text)
        if not spatial_text:
            continue
        record.weather_text = weather_text
        record.visibility_clause = report.visibility_clause
        record.weather_label = report.weather_label
        record.spatial_text = spatial_text
        if regions is not None:
            hints = extract_region_hints(regions)
            record.region_hints = [r.label_text for r in hints]
            record.region_boxes = [list(r.box) for r in hints]
            record.region_object_ids = [r.object_id for r in hints]
        record.status = "accepted"
        return record
    return record


class CaptionStore:
    """Append-only JSON-lines store keyed by ``(location_id, view, condition)``."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: dict[tuple[int, str, str], CaptionRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    rec = CaptionRecord.from_json(line)
                    self.records[(rec.location_id, rec.view, rec.condition)] = rec

    def add(self, record: CaptionRecord) -> None:
        with self._lock:
            self.records[(record.location_id, record.view, record.condition)] = record
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(record.to_json() + "\n")

    def get(self, location_id: int, view: str, condition: str) -> CaptionRecord:
        try:
            return self.records[(location_id, view, condition)]
        except KeyError:
            raise KeyError(f"no caption for location {location_id} ({view}, {condition})") from None

    def __len__(self):
        return len(self.records)
