import numpy as np
import pytest

from weathergeo import config, pipeline
from weathergeo.captions import ScriptedClient
from weathergeo.dataset import generate_toy_world

SMALL = {"data.locations": 3, "data.test_locations": 3, "data.drones_per_location": 2,
         "data.image_size": 32, "model.hidden_dim": 16, "model.embed_dim": 16,
         "model.vocab_size": 512, "model.token_dim": 8, "train.epochs": 2, "train.batch_size": 3,
         "eval.directions": ["D2S"]}


def test_caption_coverage():
    world = generate_toy_world(1, 3, 2)
    store = pipeline.caption_toy_world(world, 4, image_size=32)
    assert len(store) == 3 * 11
    rec = store.get(2, "drone", "Fog+Snow")
    assert rec.status == "accepted" and len(rec.region_object_ids) == 3
    assert len(pipeline.caption_toy_world(world, "NAN")) == 0


def test_prepare_idempotent_and_guarded(tmp_path):
    cfg = config.build(SMALL)
    root = tmp_path / "data"
    assert pipeline.prepare(cfg, root) is True
    assert pipeline.prepare(cfg, root) is False
    other = config.build({**SMALL, "seed": 8})
    with pytest.raises(pipeline.PrepareError):
        pipeline.prepare(other, root)
    assert pipeline.prepare(other, root, force=True) is True
    dirty = tmp_path / "dirty"
    dirty.mkdir()
    (dirty / "stray.txt").write_text("x")
    with pytest.raises(pipeline.PrepareError):
        pipeline.prepare(cfg, dirty)
    worlds = pipeline.load_worlds(root)
    assert worlds["train"].seed == 8 and worlds["train"].num_locations == 3


def test_captions_files(tmp_path):
    cfg = config.build(SMALL)
    pipeline.prepare(cfg, tmp_path)
    path = pipeline.write_captions(cfg, tmp_path, "test")
    assert path == pipeline.captions_path(tmp_path, "test", 6)
    assert len(pipeline.load_captions(path, 6)) == 33
    assert pipeline.load_captions("missing", "NAN") is None
    with pytest.raises(FileNotFoundError):
        pipeline.load_captions(tmp_path / "missing.jsonl", 6)


def test_exhausted_captions_are_marked():
    world = generate_toy_world(1, 3, 1)
    store = pipeline.caption_toy_world(world, 6, client=ScriptedClient([["nothing useful"]]),
                                       image_size=32)
    assert all(r.status == "rejected_exhausted" for r in store.records.values())


def test_run_config_and_ablation_shape():
    cfg = config.build(SMALL)
    res = pipeline.run_config(cfg)
    assert list(res.reports) == ["D2S"] and len(res.reports["D2S"].rows) == 10
    table = pipeline.ablate(cfg, "fusion", seeds=[0])
    assert list(table.cells) == ["Concatenation", "Static Gate", "Dynamic Gate"]
    row = table.to_dict()["rows"][2]["D2S"]
    assert row["mean"]["ap"] == pytest.approx(np.mean([c["ap"] for c in row["conditions"]]))
    with pytest.raises(ValueError):
        pipeline.ablate(cfg, "loss")


def test_cot_sweep_labels():
    assert [label for label, _ in pipeline.SWEEPS["cot"]] == ["NAN", "0", "2", "4", "6"]
