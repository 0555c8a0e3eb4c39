"""Command-line entry point: ``weathergeo <command> ...``.

Commands: prepare, synthesize-weather, generate-captions, train, evaluate,
ablate, report. Each exits 0 on success; on failure it prints one JSON line
``{"error": <kind>, "message": <text>, "command": <name>}`` to stderr and
exits 1 (argument errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import pipeline
from .checkpoint import load_checkpoint
from .dataset import IMAGE_SUFFIXES, load_image, scan_dataset
from .encoders import EncoderConfig
from .model import ModelConfig
from .retrieval import RetrievalReport, evaluate
from .trainer import TrainingSet, train
from .weather import apply_weather, condition_suite, load_spec, parse_condition


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config handling


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args, extra: dict | None = None) -> dict:
    """Config file (or preset), then ``--set key=value`` pairs, then ``extra``."""
    overrides: dict = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise config_mod.ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = _parse_value(value)
    overrides.update(extra or {})
    if getattr(args, "config", None):
        base = config_mod.load(args.config, getattr(args, "preset", None))
        return config_mod.build(config_mod.merge(base, overrides))
    return config_mod.build(overrides, getattr(args, "preset", None))


def _model_config_from_meta(meta: dict) -> ModelConfig:
    m = dict(meta["model"])
    m["encoder"] = EncoderConfig(**m["encoder"])
    return ModelConfig(**m)


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    extra = {}
    if args.locations is not None:
        extra["data.locations"] = args.locations
    if args.seed is not None:
        extra["seed"] = args.seed
    cfg = resolve_config(args, extra)
    out = Path(args.out) if args.out else pipeline.data_root(cfg)
    if args.source:
        for split in ("train", "test"):
            index = scan_dataset(args.source, split)
            print(f"{split}: {index.num_locations} locations, "
                  f"{len(index.of_view('drone'))} drone / {len(index.of_view('satellite'))} satellite images")
        return 0
    if not args.toy:
        raise CommandError("prepare needs --toy or --source <dataset root>")
    changed = pipeline.prepare(cfg, out, force=args.force)
    print(f"{'prepared' if changed else 'up to date'}: {out}")
    return 0


def _weather_targets(src: Path):
    if src.is_file():
        return [(src, Path(src.name))]
    if not src.is_dir():
        raise CommandError(f"input not found: {src}")
    return [(p, p.relative_to(src)) for p in sorted(src.rglob("*"))
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]


def cmd_synthesize_weather(args) -> int:
    from PIL import Image

    cond = args.condition
    spec = load_spec(cond) if Path(cond).is_file() else parse_condition(cond, args.intensity)
    targets = _weather_targets(Path(args.input))
    if not targets:
        raise CommandError(f"no images under {args.input}")
    out = Path(args.out)
    for src, rel in targets:
        seed = zlib.crc32(f"{args.seed}:{rel.as_posix()}".encode())
        img = apply_weather(load_image(str(src)), spec.reseeded(seed))
        dst = out / rel.with_suffix(".png")
        dst.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(dst)
    print(f"wrote {len(targets)} images to {out}")
    return 0


def cmd_generate_captions(args) -> int:
    extra = {}
    if args.cot_steps is not None:
        extra["captions.cot_steps"] = args.cot_steps if args.cot_steps == "NAN" else int(args.cot_steps)
    if args.client is not None:
        extra["captions.client"] = args.client
    cfg = resolve_config(args, extra)
    if args.dataset == "toy":
        root = pipeline.data_root(cfg)
        pipeline.prepare(cfg, root)
    else:
        root = Path(args.dataset)
    path = pipeline.write_captions(cfg, root, args.split, args.out)
    print(f"captions: {path}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    root = Path(args.data) if args.data else pipeline.data_root(cfg)
    out = Path(args.out) if args.out else Path(cfg["output_root"]) / "train"
    steps = cfg["captions"]["cot_steps"]
    cap_path = args.captions or pipeline.captions_path(root, "train", steps)
    world = pipeline.load_worlds(root)["train"]
    if world.num_locations != cfg["data"]["locations"]:
        raise CommandError(f"prepared world has {world.num_locations} locations, "
                           f"config says {cfg['data']['locations']}")
    captions = pipeline.load_captions(cap_path, steps)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_mod.dumps({**cfg, "data": {**cfg["data"], "root": str(root)}}))
    suite = condition_suite(cfg["weather"]["intensity"])
    result = train(config_mod.train_config(cfg), config_mod.model_config(cfg),
                   TrainingSet(world, cfg["data"]["image_size"]), captions, suite,
                   out_dir=out, resume_from=args.resume,
                   meta={"config": config_mod.portable(cfg)})
    print(f"trained {result.steps} steps; checkpoint: {out / f'ckpt_epoch_{result.epoch}'}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.ckpt)
    params, _, meta = load_checkpoint(ckpt)
    if "config" not in meta:
        raise CommandError(f"{ckpt} carries no experiment config")
    cfg = config_mod.build(meta["config"])
    root = args.data
    if root is None:
        saved = ckpt.parent / "config.json"
        if not saved.exists():
            raise CommandError("cannot locate the prepared data; pass --data")
        root = json.loads(saved.read_text())["data.root"]
    model_cfg = _model_config_from_meta(meta)
    steps = cfg["captions"]["cot_steps"]
    cap_path = args.captions or pipeline.captions_path(root, "test", steps)
    captions = pipeline.load_captions(cap_path, steps)
    world = pipeline.load_worlds(root)["test"]
    report = evaluate(params, model_cfg, world, captions, args.direction.upper(),
                      condition_suite(cfg["weather"]["intensity"]), cfg["data"]["image_size"],
                      cfg["eval"]["satellite_text"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    out.with_suffix(".txt").write_text(report.to_table() + "\n")
    print(report.to_table())
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = Path(args.out) if args.out else Path(cfg["output_root"]) / "ablation"
    try:
        table = pipeline.ablate(cfg, args.sweep, seeds)
    except pipeline.AblationError as exc:
        print(json.dumps({"cells": exc.status}, sort_keys=True), file=sys.stderr)
        raise
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation-{args.sweep}.json").write_text(
        json.dumps(table.to_dict(), sort_keys=True, indent=1) + "\n")
    text = table.to_table("r1") + "\n" + table.to_table("ap")
    (out / f"ablation-{args.sweep}.txt").write_text(text)
    print(text)
    return 0


def _load_reports(directory) -> dict[str, RetrievalReport]:
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(f"not a directory: {d}")
    found = {}
    for path in sorted(d.glob("*.json")):
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "direction" in data and "rows" in data:
            found[path.stem] = RetrievalReport.from_dict(data)
    if not found:
        raise CommandError(f"no retrieval reports in {d}")
    return found


def render_delta(a: RetrievalReport, b: RetrievalReport) -> str:
    """Two runs side by side with a B minus A column per metric."""
    if [r["name"] for r in a.rows] != [r["name"] for r in b.rows]:
        raise CommandError("reports cover different conditions")
    head = (f"{a.direction:<12}" + "".join(f"{h:>9}" for h in ("A R@1", "A AP", "B R@1", "B AP"))
            + "".join(f"{h:>9}" for h in ("dR@1", "dAP")))
    lines = [head]
    for ra, rb in zip(a.rows + [a.mean], b.rows + [b.mean]):
        vals = [ra["r1"], ra["ap"], rb["r1"], rb["ap"], rb["r1"] - ra["r1"], rb["ap"] - ra["ap"]]
        lines.append(f"{ra['name']:<12}" + "".join(f"{v:>9.2f}" for v in vals))
    return "\n".join(lines)


def cmd_report(args) -> int:
    first = _load_reports(args.runs[0])
    if len(args.runs) == 1:
        print("\n\n".join(f"[{name}]\n{r.to_table()}" for name, r in first.items()))
        return 0
    second = _load_reports(args.runs[1])
    common = [n for n in first if n in second]
    if not common:
        raise CommandError("the two runs share no report names")
    print("\n\n".join(f"[{n}]\n{render_delta(first[n], second[n])}" for n in common))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weathergeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON config file (flat dotted keys)")
        p.add_argument("--preset", choices=sorted(config_mod.PRESETS))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; VALUE is parsed as JSON when possible")
        return p

    p = with_config(sub.add_parser("prepare", help="write toy worlds and image trees"))
    p.add_argument("--toy", action="store_true")
    p.add_argument("--source", help="validate an existing dataset tree instead")
    p.add_argument("--locations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synthesize-weather", help="apply a weather condition to images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--condition", required=True, help="name such as Fog+Rain, or a spec file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intensity", type=float, default=0.5)
    p.set_defaults(func=cmd_synthesize_weather)

    p = with_config(sub.add_parser("generate-captions", help="caption a prepared split"))
    p.add_argument("--dataset", required=True, help="prepared directory, dataset tree, or 'toy'")
    p.add_argument("--cot-steps", choices=["NAN", "0", "2", "4", "6"])
    p.add_argument("--client", help="'mock' or an endpoint URL")
    p.add_argument("--split", choices=pipeline.SPLITS, default="train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate_captions)

    p = with_config(sub.add_parser("train", help="train a model"))
    p.add_argument("--out")
    p.add_argument("--data")
    p.add_argument("--captions")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the held-out world")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--direction", required=True, type=str.lower, choices=["d2s", "s2d"])
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--captions")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("ablate", help="fusion or CoT-step sweep"))
    p.add_argument("--sweep", required=True, choices=sorted(pipeline.SWEEPS))
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render stored reports; two runs add a delta column")
    p.add_argument("runs", nargs="+", metavar="DIR")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report" and len(args.runs) > 2:
        parser.error("report takes one or two run directories")
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as one machine-readable line
        print(json.dumps({"command": args.command, "error": type(exc).__name__,
                          "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
