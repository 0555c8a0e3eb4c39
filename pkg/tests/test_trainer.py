import numpy as np
import pytest
from scipy import stats

from weathergeo import checkpoint
from weathergeo.dataset import generate_toy_world
from weathergeo.encoders import EncoderConfig
from weathergeo.model import ModelConfig
from weathergeo.objectives import TrainingStepError
from weathergeo.pipeline import caption_toy_world
from weathergeo.trainer import (
    TrainConfig, TrainingSet, build_batch, format_log_line, lr_at, parse_log_line, sgd_step, train,
)
from weathergeo.weather import condition_suite

ENC = EncoderConfig(image_size=32, patch_size=8, hidden_dim=16, embed_dim=16, vocab_size=512,
                    token_dim=8)


@pytest.fixture(scope="module")
def toy():
    world = generate_toy_world(3, 6, 2)
    suite = condition_suite()
    caps = caption_toy_world(world, 6, suite, image_size=32)
    return world, suite, caps, TrainingSet(world, 32)


def test_lr_schedule():
    cfg = TrainConfig(base_lr=0.02)
    assert lr_at(cfg, 0) == 0.02
    assert lr_at(cfg, 119) == 0.02
    assert lr_at(cfg, 120) == pytest.approx(0.002)
    assert lr_at(cfg, 180) == pytest.approx(0.0002)
    with pytest.raises(ValueError):
        lr_at(cfg, 210)
    with pytest.raises(ValueError):
        TrainConfig(lr_drops=((50, 0.1), (10, 0.01)))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


def test_sgd_plain_descent():
    p = {"w": np.array([1.0, -2.0])}
    sgd_step(p, {"w": np.array([0.5, 0.5])}, 0.1, 0.0, 0.0, {})
    assert np.allclose(p["w"], [0.95, -2.05])


def test_sgd_two_momentum_steps():
    g = np.array([0.3, -1.0])
    p, state = {"w": np.zeros(2)}, {}
    for _ in range(2):
        sgd_step(p, {"w": g}, 0.1, 0.9, 0.0, state)
    assert np.allclose(-p["w"], 0.1 * g * (1 + 1.9), atol=1e-15)


def test_sgd_decay_only_and_tau():
    p, state = {"w": np.array([2.0]), "tau": np.array([0.02])}, {}
    sgd_step(p, {"w": np.zeros(1), "tau": np.array([5.0])}, 0.1, 0.0, 0.5, state)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.05))
    assert p["tau"][0] == 0.01  # clamped, never decayed
    with pytest.raises(TrainingStepError):
        sgd_step(p, {"w": np.array([np.inf]), "tau": np.zeros(1)}, 0.1, 0.0, 0.0, state)


def test_sgd_frozen_and_scaled():
    p = {"vis.W": np.ones(1), "clf.W": np.ones(1), "tau": np.array([0.5])}
    g = {k: np.ones(1) for k in p}
    sgd_step(p, g, 0.1, 0.0, 0.0, {}, frozen=("vis.",), lr_scales={"tau": 0.01})
    assert p["vis.W"][0] == 1.0 and p["clf.W"][0] == pytest.approx(0.9)
    assert p["tau"][0] == pytest.approx(0.499)


def test_batch_determinism_and_nan(toy):
    world, suite, caps, data = toy
    a = build_batch(data, caps, suite, np.random.default_rng(4), 4)
    b = build_batch(data, caps, suite, np.random.default_rng(4), 4)
    assert np.array_equal(a.drone, b.drone) and a.labels.tolist() == b.labels.tolist()
    assert len(set(a.labels.tolist())) == 4
    assert a.hint_boxes.shape == (4, 3, 4) and len(a.drone_text) == 4
    n = build_batch(data, None, suite, np.random.default_rng(4), 4, text_mode="NAN")
    assert n.drone_text is None and n.hint_text is None


def test_missing_caption_named(toy):
    world, suite, _, data = toy
    with pytest.raises(ValueError, match="missing caption"):
        build_batch(data, caption_toy_world(world, "NAN"), suite, np.random.default_rng(0), 4)


def test_weather_sampled_uniformly(toy):
    _, suite, caps, data = toy
    rng = np.random.default_rng(11)
    counts = dict.fromkeys((n for n, _ in suite), 0)
    while sum(counts.values()) < 1000:
        for c in build_batch(data, None, suite, rng, 6, text_mode="NAN", augment=False).conditions:
            counts[c] += 1
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_log_line_roundtrip():
    rec = {"step": 3, "lr": 0.1, "itc": 1.5, "itm": None, "la": 0.25, "ce": 2.0, "total": 3.75, "tau": 0.07}
    line = format_log_line(rec)
    assert line.split()[0] == "step=3" and "itm=NA" in line
    assert parse_log_line(line) == rec


def _cfgs(**kw):
    tc = TrainConfig(base_lr=0.05, epochs=4, batch_size=4, seed=9, lr_drops=((3, 0.1),), **kw)
    return tc, ModelConfig(ENC, num_classes=6)


def test_train_reproducible_and_logs(toy, tmp_path):
    _, suite, caps, data = toy
    tc, mc = _cfgs()
    a = train(tc, mc, data, caps, suite, out_dir=tmp_path / "a")
    b = train(tc, mc, data, caps, suite, out_dir=tmp_path / "b")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert (tmp_path / "a" / "ckpt_epoch_4").read_bytes() == (tmp_path / "b" / "ckpt_epoch_4").read_bytes()
    lines = (tmp_path / "a" / "train.log").read_text().splitlines()
    assert len(lines) == a.steps
    for line in lines:
        rec = parse_log_line(line)
        parts = sum(rec[k] for k in ("itc", "itm", "la", "ce"))
        assert abs(rec["total"] - parts) <= 1e-9


def test_resume_matches_uninterrupted(toy, tmp_path):
    _, suite, caps, data = toy
    tc, mc = _cfgs(checkpoint_every=2)
    full = train(tc, mc, data, caps, suite, out_dir=tmp_path / "full")
    resumed = train(tc, mc, data, caps, suite, out_dir=tmp_path / "resumed",
                    resume_from=tmp_path / "full" / "ckpt_epoch_2")
    assert resumed.steps == full.steps
    assert all(np.array_equal(full.params[k], resumed.params[k]) for k in full.params)


def test_freeze_encoders(toy):
    _, suite, caps, data = toy
    tc, mc = _cfgs(freeze_encoders=True, max_steps=3)
    from weathergeo.model import init_params
    start = init_params(mc, np.random.default_rng([tc.seed, 0]))
    out = train(tc, mc, data, caps, suite)
    assert out.steps == 3
    assert np.array_equal(out.params["vis.W1"], start["vis.W1"])
    assert not np.array_equal(out.params["clf.W"], start["clf.W"])


def test_checkpoint_resave_identical(toy, tmp_path):
    _, suite, caps, data = toy
    tc, mc = _cfgs(max_steps=2)
    train(tc, mc, data, caps, suite, out_dir=tmp_path)
    path = next(tmp_path.glob("ckpt_epoch_*"))
    params, state, meta = checkpoint.load_checkpoint(path)
    checkpoint.save_checkpoint(tmp_path / "again", params, state, meta)
    assert (tmp_path / "again").read_bytes() == path.read_bytes()
    assert set(state) == set(params)
    assert all(state[k].shape == params[k].shape for k in params)
