import numpy as np
import pytest

from weathergeo.captions import (
    CaptionRecord, CaptionStore, CotConfig, MockLvlmClient, ScriptedClient, build_prompts,
    extract_region_hints, generate_caption_record, validate_caption,
)
from weathergeo.dataset import GroundTruthRegion, generate_toy_world, render_views
from weathergeo.weather import parse_condition

VALID = "Visibility is low, dense fog diffusion. Weather: fog."
UNSURE = "Visibility is moderate; it is uncertain, possibly rain. Weather: rain."
NO_VIS = "Heavy rain streaks everywhere. Weather: rain."


def test_prompt_counts():
    six = build_prompts(CotConfig(6))
    assert len(six) == 6
    assert "visib" in six[0].text.lower()
    assert "weather:" in six[2].text.lower()
    assert "layout" in six[3].text.lower()
    assert len(build_prompts(CotConfig(0))) == 1
    assert [len(build_prompts(CotConfig(n))) for n in (2, 4)] == [2, 4]
    with pytest.raises(ValueError):
        CotConfig(3)


def test_validation_examples():
    ok = validate_caption("visibility is low, dense fog diffusion, weather: fog")
    assert ok.accepted and ok.weather_label == "fog"
    unsure = validate_caption("visibility is low, possibly rainy, weather: rain")
    assert not unsure.accepted
    assert any(r.startswith("uncertainty term") for r in unsure.reasons)
    missing = validate_caption(NO_VIS)
    assert not missing.accepted and "missing visibility" in missing.reasons


def test_uncertainty_terms_match_word_starts_only():
    # "maybe" inside another word should not trip the filter
    assert validate_caption("Visibility is high, clear sky, no haze. Weather: clear").accepted


def _record(script, retries=3):
    client = ScriptedClient(script)
    img = np.zeros((8, 8, 3))
    return generate_caption_record(img, None, client, CotConfig(6, retries))


def test_retry_valid_first():
    rec = _record([[VALID]])
    assert (rec.status, rec.attempts) == ("accepted", 1)


def test_retry_uncertain_then_valid():
    rec = _record([[UNSURE], [UNSURE], [VALID]])
    assert (rec.status, rec.attempts) == ("accepted", 3)


def test_retry_exhausted():
    rec = _record([[NO_VIS]])
    assert (rec.status, rec.attempts) == ("rejected_exhausted", 3)
    assert rec.weather_text == ""


def _region(cx, cy, w, h, i):
    return GroundTruthRegion((cx, cy, w, h), f"r{i}", i)


def test_region_hints_top3_by_area():
    regions = [_region(0.5, 0.5, 0.1 * (i + 1), 0.1, i) for i in range(5)]
    assert [r.object_id for r in extract_region_hints(regions)] == [4, 3, 2]
    three = regions[:3]
    assert {r.object_id for r in extract_region_hints(three)} == {0, 1, 2}


def test_region_hint_ties():
    regions = [_region(0.6, 0.2, 0.2, 0.2, 0), _region(0.3, 0.7, 0.2, 0.2, 1),
               _region(0.3, 0.4, 0.2, 0.2, 2), _region(0.5, 0.5, 0.1, 0.1, 3)]
    assert [r.object_id for r in extract_region_hints(regions)] == [2, 1, 0]
    with pytest.raises(ValueError):
        extract_region_hints(regions[:2])


@pytest.mark.parametrize("steps", [0, 2, 4, 6])
def test_mock_client_accepted_with_hints(steps):
    scene = generate_toy_world(7, 1, 1).scenes[0]
    img, regions = render_views(scene, "drone", scene.drone_jitter_seeds[0])
    spec = parse_condition("Fog+Rain").reseeded(1)
    rec = generate_caption_record(img, scene.facts, MockLvlmClient(), CotConfig(steps),
                                  weather=spec, condition="Fog+Rain", regions=regions)
    assert rec.status == "accepted" and rec.attempts == 1
    assert "fog" in rec.weather_label
    assert len(rec.region_hints) == 3 and len(rec.region_boxes) == 3
    assert rec.text


def test_store_roundtrip(tmp_path):
    store = CaptionStore(tmp_path / "c.jsonl")
    rec = CaptionRecord(3, "x", "drone", "Fog", 6, VALID, "v", "fog", "Roads run north.",
                        ["red building"], [[0.5, 0.5, 0.1, 0.1]], [2], 1, "accepted")
    store.add(rec)
    again = CaptionStore(tmp_path / "c.jsonl")
    assert again.get(3, "drone", "Fog") == rec
    with pytest.raises(KeyError):
        again.get(3, "drone", "Rain")
