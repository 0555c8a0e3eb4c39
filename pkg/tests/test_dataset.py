import numpy as np
import pytest
from PIL import Image

from weathergeo.dataset import (
    DatasetError, GroundTruthRegion, ToyObject, ToyScene, ViewTransform, dumps_world,
    generate_toy_world, load_world, render_scene, render_views, sample_region_representative,
    save_world, scan_dataset, write_toy_tree,
)


def _touch_png(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(path)


def test_scan_two_locations(tmp_path):
    for loc in ("a", "b"):
        _touch_png(tmp_path / "train" / "satellite" / loc / "s.png")
        for k in range(3):
            _touch_png(tmp_path / "train" / "drone" / loc / f"d{k}.png")
    index = scan_dataset(tmp_path, "train")
    assert len(index.entries) == 8
    assert index.num_locations == 2
    assert index.location_names == ["a", "b"]


def test_scan_empty_root(tmp_path):
    with pytest.raises(DatasetError):
        scan_dataset(tmp_path, "train")


def test_scan_location_missing_view(tmp_path):
    _touch_png(tmp_path / "train" / "satellite" / "a" / "s.png")
    _touch_png(tmp_path / "train" / "drone" / "a" / "d.png")
    _touch_png(tmp_path / "train" / "drone" / "b" / "d.png")
    with pytest.raises(DatasetError, match="without images"):
        scan_dataset(tmp_path, "train")


def test_scan_toy_fixture_tree(tmp_path):
    world = generate_toy_world(7, 16, 4)
    write_toy_tree(world, tmp_path, "train", size=16)
    index = scan_dataset(tmp_path, "train")
    assert index.num_locations == 16
    assert len(index.of_view("satellite")) == 16
    assert len(index.of_view("drone")) == 64


def test_world_determinism():
    assert dumps_world(generate_toy_world(7, 4, 2)) == dumps_world(generate_toy_world(7, 4, 2))
    assert dumps_world(generate_toy_world(7, 4, 2)) != dumps_world(generate_toy_world(8, 4, 2))


def test_minimal_world():
    world = generate_toy_world(7, 1, 1)
    assert world.num_locations == 1
    _, regions = render_views(world.scenes[0], "satellite")
    assert len(regions) >= 3


def test_world_roundtrip(tmp_path):
    world = generate_toy_world(3, 5, 2)
    save_world(world, tmp_path / "w.jsonl")
    assert dumps_world(load_world(tmp_path / "w.jsonl")) == dumps_world(world)


def test_renders_are_deterministic():
    scene = generate_toy_world(7, 2, 2).scenes[0]
    a, ra = render_views(scene, "satellite", 0)
    b, rb = render_views(scene, "satellite", 99)
    assert np.array_equal(a, b) and ra == rb
    c, _ = render_views(scene, "drone", 5)
    d, _ = render_views(scene, "drone", 5)
    assert np.array_equal(c, d)
    assert a.shape == (64, 64, 3) and a.min() >= 0 and a.max() <= 1


def test_centre_region_identity_transform():
    obj = ToyObject(0, "building", "red", (0.8, 0.1, 0.1), (0.5, 0.5, 0.2, 0.3))
    scene = ToyScene(0, (0.5, 0.5, 0.5), [obj], {}, [1])
    _, regions = render_scene(scene, ViewTransform(), 32)
    assert np.allclose(regions[0].box, (0.5, 0.5, 0.2, 0.3))


def test_regions_valid_under_jitter():
    world = generate_toy_world(11, 6, 4)
    for scene in world.scenes:
        for seed in scene.drone_jitter_seeds:
            _, regions = render_views(scene, "drone", seed)
            assert all(r.is_valid() for r in regions)


def test_region_representative():
    world = generate_toy_world(7, 16, 1)
    reps = sample_region_representative(world.index(), 3)
    assert len(reps) == 16
    assert all(ref == f"toy:{loc}:drone:0" for loc, ref in reps.items())
    world4 = generate_toy_world(7, 16, 4)
    assert sample_region_representative(world4.index(), 3) == sample_region_representative(world4.index(), 3)


def test_region_area():
    assert GroundTruthRegion((0.5, 0.5, 0.2, 0.5), "x").area == pytest.approx(0.1)
