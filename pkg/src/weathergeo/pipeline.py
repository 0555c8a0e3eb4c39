"""Glue for experiments: prepared-data layout, captioning, training runs, sweeps.

A prepared data directory holds::

    manifest.json              config fingerprint and the world seeds
    world-train.jsonl          toy worlds, one scene per line
    world-test.jsonl
    train/{drone,satellite}/<loc>/*.png    the same worlds as image trees
    test/{drone,satellite}/<loc>/*.png
    captions/<split>-<steps>.jsonl         written by generate-captions
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .captions import (CaptionStore, CotConfig, HttpLvlmClient, LvlmClient, MockLvlmClient,
                       generate_caption_record)
from .checkpoint import fingerprint
from .dataset import (DatasetError, ToyWorld, generate_toy_world, load_image, load_world,
                      render_ref, sample_region_representative, save_world, scan_dataset,
                      write_toy_tree)
from .model import ModelConfig
from .retrieval import RetrievalReport, evaluate
from .trainer import TrainConfig, TrainingSet, TrainResult, train
from .weather import WeatherSpec, apply_weather, condition_suite

SPLITS = ("train", "test")


def caption_seed(location_id: int, condition: str) -> int:
    return zlib.crc32(f"{location_id}:{condition}".encode())


def make_client(name: str) -> LvlmClient:
    if name == "mock":
        return MockLvlmClient()
    return HttpLvlmClient(endpoint=name)


def caption_toy_world(world: ToyWorld, step_count, suite: list[tuple[str, WeatherSpec]] | None = None,
                      client: LvlmClient | None = None, store: CaptionStore | None = None,
                      seed: int = 0, image_size: int = 64, max_retries: int = 3) -> CaptionStore:
    """Caption one representative drone image per location under every condition,
    plus each clean satellite image.

    ``step_count="NAN"`` means no text at all and returns an empty store.
    """
    store = store if store is not None else CaptionStore()
    if step_count == "NAN":
        return store
    suite = suite if suite is not None else condition_suite()
    client = client if client is not None else MockLvlmClient()
    cfg = CotConfig(step_count=step_count, max_retries=max_retries)
    reps = sample_region_representative(world.index(), seed)
    for scene in world.scenes:
        loc = scene.location_id
        ref = reps[loc]
        img, regions = render_ref(world, ref, image_size)
        for name, spec in suite:
            spec = spec.reseeded(caption_seed(loc, name))
            store.add(generate_caption_record(
                apply_weather(img, spec), scene.facts, client, cfg, location_id=loc,
                image_ref=ref, view="drone", condition=name, weather=spec, regions=regions))
        sat_ref = f"toy:{loc}:satellite:0"
        sat, _ = render_ref(world, sat_ref, image_size)
        store.add(generate_caption_record(
            sat, scene.facts, client, cfg, location_id=loc, image_ref=sat_ref,
            view="satellite", condition="Normal", weather=WeatherSpec()))
    return store


def caption_tree(root, split: str, step_count, client: LvlmClient, store: CaptionStore,
                 seed: int = 0, image_size: int | None = None, max_retries: int = 3) -> CaptionStore:
    """Caption a real image tree: one representative drone image and the first
    satellite image per location, as found (no synthetic weather)."""
    if step_count == "NAN":
        return store
    index = scan_dataset(root, split)
    cfg = CotConfig(step_count=step_count, max_retries=max_retries)
    reps = sample_region_representative(index, seed)
    sats = index.by_location("satellite")
    for loc in range(index.num_locations):
        for view, ref in (("drone", reps[loc]), ("satellite", sats[loc][0].image_ref)):
            store.add(generate_caption_record(
                load_image(ref, image_size), None, client, cfg, location_id=loc,
                image_ref=ref, view=view, condition="Normal"))
    return store


# ---------------------------------------------------------------------------
# prepared data


def world_seeds(cfg: dict) -> dict[str, int]:
    return {"train": int(cfg["seed"]), "test": config_mod.derive_seed(cfg["seed"], "world.test")}


def make_worlds(cfg: dict) -> dict[str, ToyWorld]:
    d = cfg["data"]
    seeds = world_seeds(cfg)
    return {
        "train": generate_toy_world(seeds["train"], d["locations"], d["drones_per_location"]),
        "test": generate_toy_world(seeds["test"], d["test_locations"], d["drones_per_location"]),
    }


def data_fingerprint(cfg: dict) -> str:
    return fingerprint({"seed": cfg["seed"], "data": config_mod.portable(cfg)["data"]})


def data_root(cfg: dict) -> Path:
    root = cfg["data"]["root"]
    return Path(root) if root else Path(cfg["output_root"]) / "data"


class PrepareError(RuntimeError):
    pass


def prepare(cfg: dict, root, force: bool = False) -> bool:
    """Write both toy worlds and their image trees; returns False when already up to date."""
    root = Path(root)
    manifest = root / "manifest.json"
    fp = data_fingerprint(cfg)
    if manifest.exists():
        old = json.loads(manifest.read_text()).get("fingerprint")
        if old == fp:
            return False
        if not force:
            raise PrepareError(f"{root} holds data for another config (fingerprint {old}); use --force")
    elif root.exists() and any(root.iterdir()) and not force:
        raise PrepareError(f"{root} is not empty and has no manifest; use --force")
    if force and root.exists():
        _clear(root)
    root.mkdir(parents=True, exist_ok=True)
    worlds = make_worlds(cfg)
    for split, world in worlds.items():
        save_world(world, root / f"world-{split}.jsonl")
        write_toy_tree(world, root, split, cfg["data"]["image_size"])
    manifest.write_text(json.dumps({"fingerprint": fp, "seeds": world_seeds(cfg)},
                                   sort_keys=True, indent=1) + "\n")
    return True


def _clear(root: Path) -> None:
    import shutil

    for p in root.iterdir():
        if p.is_dir():
            shutil.rmtree(p)
        else:
            p.unlink()


def load_worlds(root) -> dict[str, ToyWorld]:
    root = Path(root)
    paths = {s: root / f"world-{s}.jsonl" for s in SPLITS}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise DatasetError(f"not a prepared data directory (missing {', '.join(missing)})")
    return {s: load_world(p) for s, p in paths.items()}


def captions_path(root, split: str, step_count) -> Path:
    return Path(root) / "captions" / f"{split}-{step_count}.jsonl"


def write_captions(cfg: dict, root, split: str, out=None, client: LvlmClient | None = None) -> Path:
    """Caption one split of a prepared directory into a fresh JSON-lines file."""
    steps = cfg["captions"]["cot_steps"]
    out = Path(out) if out is not None else captions_path(root, split, steps)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists():
        out.unlink()
    store = CaptionStore(out)
    client = client if client is not None else make_client(cfg["captions"]["client"])
    seed = config_mod.derive_seed(cfg["seed"], "captions")
    if (Path(root) / f"world-{split}.jsonl").exists():
        world = load_worlds(root)[split]
        caption_toy_world(world, steps, condition_suite(cfg["weather"]["intensity"]), client,
                          store, seed, cfg["data"]["image_size"], cfg["captions"]["max_retries"])
    else:
        caption_tree(root, split, steps, client, store, seed, cfg["data"]["image_size"],
                     cfg["captions"]["max_retries"])
    if steps == "NAN":
        out.touch()
    return out


def load_captions(path, step_count) -> CaptionStore | None:
    if step_count == "NAN":
        return None
    if not Path(path).exists():
        raise FileNotFoundError(f"caption file not found: {path} (run generate-captions first)")
    return CaptionStore(path)


# ---------------------------------------------------------------------------
# in-memory runs


@dataclass
class ExperimentResult:
    train: TrainResult
    reports: dict[str, RetrievalReport]


def run_experiment(train_world: ToyWorld, test_world: ToyWorld, model_cfg: ModelConfig,
                   train_cfg: TrainConfig, directions=("D2S",), image_size: int = 64,
                   client: LvlmClient | None = None, out_dir=None, intensity: float = 0.5,
                   caption_seed_: int = 0, satellite_text: str = "generated") -> ExperimentResult:
    """Caption both worlds, train on one and score the other."""
    suite = condition_suite(intensity)
    step = model_cfg.text_mode
    train_caps = caption_toy_world(train_world, step, suite, client, seed=caption_seed_,
                                   image_size=image_size)
    test_caps = caption_toy_world(test_world, step, suite, client, seed=caption_seed_,
                                  image_size=image_size)
    data = TrainingSet(train_world, image_size)
    result = train(train_cfg, model_cfg, data, train_caps, suite, out_dir=out_dir)
    reports = {d: evaluate(result.params, model_cfg, test_world, test_caps, d, suite, image_size,
                           satellite_text)
               for d in directions}
    return ExperimentResult(result, reports)


def run_config(cfg: dict, out_dir=None) -> ExperimentResult:
    worlds = make_worlds(cfg)
    return run_experiment(worlds["train"], worlds["test"], config_mod.model_config(cfg),
                          config_mod.train_config(cfg), tuple(cfg["eval"]["directions"]),
                          cfg["data"]["image_size"], make_client(cfg["captions"]["client"]),
                          out_dir, cfg["weather"]["intensity"],
                          config_mod.derive_seed(cfg["seed"], "captions"),
                          cfg["eval"]["satellite_text"])


def mean_ap(report: RetrievalReport) -> float:
    return float(np.mean([r["ap"] for r in report.rows]))


# ---------------------------------------------------------------------------
# ablation sweeps

SWEEPS = {
    "fusion": [("Concatenation", {"fusion": {"mode": "concat"}, "captions": {"cot_steps": 6}}),
               ("Static Gate", {"fusion": {"mode": "static"}, "captions": {"cot_steps": 6}}),
               ("Dynamic Gate", {"fusion": {"mode": "dynamic"}, "captions": {"cot_steps": 6}})],
    "cot": [(str(s), {"fusion": {"mode": "dynamic"}, "captions": {"cot_steps": s}})
            for s in ("NAN", 0, 2, 4, 6)],
}


class AblationError(RuntimeError):
    def __init__(self, message: str, status: dict):
        super().__init__(message)
        self.status = status


@dataclass
class AblationTable:
    """Rows are sweep cells; each holds per-direction, per-condition metrics
    averaged over seeds. Mean columns are recomputed from the condition values."""

    sweep: str
    seeds: list[int]
    cells: dict[str, dict[str, list[dict]]]  # label -> direction -> condition rows

    def mean(self, label: str, direction: str, metric: str) -> float:
        return float(np.mean([r[metric] for r in self.cells[label][direction]]))

    def to_dict(self) -> dict:
        out = {"sweep": self.sweep, "seeds": self.seeds, "rows": []}
        for label, dirs in self.cells.items():
            row = {"label": label}
            for d, rows in dirs.items():
                row[d] = {"conditions": rows,
                          "mean": {m: self.mean(label, d, m) for m in RetrievalReport.METRICS}}
            out["rows"].append(row)
        return out

    def to_table(self, metric: str = "ap") -> str:
        lines = []
        directions = list(next(iter(self.cells.values())))
        for d in directions:
            names = [r["name"] for r in next(iter(self.cells.values()))[d]]
            head = f"{d + ' ' + metric.upper():<16}" + "".join(f"{n:>10}" for n in names) + f"{'Mean':>10}"
            lines += [head, "-" * len(head)]
            for label, dirs in self.cells.items():
                vals = [r[metric] for r in dirs[d]]
                lines.append(f"{label:<16}" + "".join(f"{v:>10.2f}" for v in vals)
                             + f"{self.mean(label, d, metric):>10.2f}")
            lines.append("")
        return "\n".join(lines)


def ablate(cfg: dict, sweep: str, seeds=None, out_dir=None) -> AblationTable:
    """Train and evaluate every cell of a sweep for each seed; average per condition."""
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; choose from {sorted(SWEEPS)}")
    seeds = [cfg["seed"]] if seeds is None else [int(s) for s in seeds]
    status: dict[str, str] = {}
    per_cell: dict[str, list[dict[str, RetrievalReport]]] = {}
    for label, override in SWEEPS[sweep]:
        per_cell[label] = []
        for seed in seeds:
            cell_cfg = config_mod.merge(cfg, {**override, "seed": seed})
            key = f"{label}/seed={seed}"
            try:
                cell_out = None if out_dir is None else Path(out_dir) / _slug(label) / f"seed-{seed}"
                per_cell[label].append(run_config(cell_cfg, cell_out).reports)
                status[key] = "ok"
            except Exception as exc:  # any failure aborts the sweep with per-cell status
                status[key] = f"failed: {exc}"
                raise AblationError(f"ablation cell {key} failed: {exc}", status) from exc
    cells = {}
    for label, runs in per_cell.items():
        cells[label] = {}
        for d in runs[0]:
            rows = []
            for i, row in enumerate(runs[0][d].rows):
                rows.append({"name": row["name"], **{
                    m: float(np.mean([r[d].rows[i][m] for r in runs])) for m in RetrievalReport.METRICS
                }})
            cells[label][d] = rows
    return AblationTable(sweep, seeds, cells)


def _slug(label: str) -> str:
    return label.lower().replace(" ", "-")
