import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weathergeo.dataset import generate_toy_world
from weathergeo.encoders import EncoderConfig
from weathergeo.model import ModelConfig, init_params
from weathergeo.pipeline import caption_toy_world
from weathergeo.retrieval import (
    ProtocolError, RetrievalReport, average_precision, evaluate, mean_average_precision,
    rank_gallery, recall_at_k, score,
)
from weathergeo.weather import condition_suite

import oracles


def test_rank_examples(rng):
    g = rng.normal(size=(6, 3))
    assert rank_gallery(g[4], np.arange(6), g)[0] == 4
    assert rank_gallery(rng.normal(size=3), [7], g[:1]).tolist() == [7]
    q, gal = rng.normal(size=3), rng.normal(size=(20, 3))
    assert rank_gallery(q, np.arange(20), gal).tolist() == oracles.rank(q, gal)
    tied = np.zeros((3, 2))
    assert rank_gallery(np.ones(2), [5, 2, 9], tied).tolist() == [2, 5, 9]
    with pytest.raises(ValueError):
        rank_gallery(q, [], np.zeros((0, 3)))


def test_recall_examples():
    assert recall_at_k([[0, 1], [1, 0]], [{0}, {1}], 1) == 100.0
    r = [[1, 0], [1, 0], [1, 0], [0, 1]]
    assert recall_at_k(r, [{0}] * 4, 1) == 25.0
    with pytest.raises(ProtocolError):
        recall_at_k([[1, 2]], [{0}], 1)


def test_ap_examples():
    assert average_precision([3, 1, 2], {3}) == 1.0
    assert average_precision([1, 3], {3}) == 0.5
    assert average_precision([1, 2, 3], {1, 3}) == pytest.approx((1 + 2 / 3) / 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.integers(1, 5), st.integers(0, 10_000))
def test_metrics_match_exhaustive(n_gallery, n_query, n_labels, seed):
    r = np.random.default_rng(seed)
    g_labels = r.integers(0, n_labels, n_gallery)
    present = sorted(set(g_labels.tolist()))
    q_labels = r.choice(present, n_query)
    gal, qry = r.normal(size=(n_gallery, 2)), r.normal(size=(n_query, 2))
    rankings = [oracles.rank(q, gal) for q in qry]
    truths = [set(np.flatnonzero(g_labels == lab).tolist()) for lab in q_labels]
    row = score(qry, q_labels, gal, g_labels, "x")
    for k, key in ((1, "r1"), (5, "r5"), (10, "r10")):
        assert row[key] == oracles.recall(rankings, truths, k)
    expected_ap = 100.0 * sum(oracles.ap(rk, t) for rk, t in zip(rankings, truths)) / n_query
    assert row["ap"] == pytest.approx(expected_ap, abs=1e-12)
    assert mean_average_precision(rankings, truths) == pytest.approx(expected_ap, abs=1e-12)


def test_report_table_and_mean():
    rows = [{"name": f"c{i}", "r1": float(i), "r5": 2.0 * i, "r10": 50.0, "ap": i / 3} for i in range(10)]
    rep = RetrievalReport("D2S", rows)
    lines = rep.to_table().splitlines()
    assert len(lines) == 12 and lines[-1].startswith("Mean")
    assert abs(rep.mean["ap"] - np.mean([r["ap"] for r in rows])) <= 1e-9
    assert RetrievalReport.from_dict(rep.to_dict()).to_json() == rep.to_json()


@pytest.fixture(scope="module")
def small_eval():
    world = generate_toy_world(5, 4, 2)
    caps = caption_toy_world(world, 6, image_size=32)
    enc = EncoderConfig(image_size=32, patch_size=8, hidden_dim=16, embed_dim=16, vocab_size=512, token_dim=8)
    return world, caps, enc


@pytest.mark.parametrize("direction", ["D2S", "S2D"])
def test_evaluate_layout(small_eval, direction):
    world, caps, enc = small_eval
    cfg = ModelConfig(enc, num_classes=4)
    params = init_params(cfg, np.random.default_rng(0))
    rep = evaluate(params, cfg, world, caps, direction, condition_suite(), 32)
    assert [r["name"] for r in rep.rows] == [n for n, _ in condition_suite()]
    assert all(0 <= r[m] <= 100 for r in rep.rows for m in RetrievalReport.METRICS)
    with pytest.raises(ValueError):
        evaluate(params, cfg, world, caps, "X2Y", condition_suite(), 32)


def test_self_retrieval_is_perfect(small_eval):
    # a gallery of the queries themselves: the nearest neighbour is always the true match
    world, caps, enc = small_eval
    cfg = ModelConfig(enc, num_classes=4, text_mode="NAN")
    params = init_params(cfg, np.random.default_rng(0))
    from weathergeo.dataset import render_views
    from weathergeo.model import embed
    imgs = np.stack([render_views(s, "satellite", 0, 32)[0] for s in world.scenes])
    e = embed(params, cfg, imgs)
    assert score(e, [0, 1, 2, 3], e, [0, 1, 2, 3], "Normal")["r1"] == 100.0
