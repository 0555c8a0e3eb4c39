import json

import pytest

from weathergeo import config


def test_defaults_valid():
    cfg = config.build()
    assert cfg["train"]["lr_drops"] == [[120, 0.1], [180, 0.01]]
    assert config.train_config(cfg).momentum == 0.9
    assert config.model_config(cfg).fusion_mode == "dynamic"


def test_flat_and_nested_agree():
    a = config.build({"train.base_lr": 0.2, "fusion.mode": "static"})
    b = config.build({"train": {"base_lr": 0.2}, "fusion": {"mode": "static"}})
    assert a == b


def test_unknown_and_invalid_keys():
    with pytest.raises(config.ConfigError, match="unknown"):
        config.build({"train.lr": 0.1})
    with pytest.raises(config.ConfigError):
        config.build({"captions.cot_steps": 3})
    with pytest.raises(config.ConfigError):
        config.build({"model.patch_size": 7})
    with pytest.raises(config.ConfigError):
        config.build({"train.batch_size": 1})
    with pytest.raises(config.ConfigError):
        config.build(preset="nope")


def test_file_preset_and_roundtrip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "toy-overfit", "seed": 3}))
    cfg = config.load(path)
    assert cfg["seed"] == 3 and cfg["train"]["base_lr"] == 0.3
    path.write_text(config.dumps(cfg))
    assert config.load(path) == cfg


def test_derive_seed():
    assert config.derive_seed(7, "train") == config.derive_seed(7, "train")
    assert config.derive_seed(7, "train") != config.derive_seed(7, "captions")
    assert 0 <= config.derive_seed(7, "x") < 2**32


def test_portable_strips_paths():
    cfg = config.build({"data.root": "/tmp/x"})
    p = config.portable(cfg)
    assert "output_root" not in p and "root" not in p["data"]
    assert cfg["data"]["root"] == "/tmp/x"
