"""Dataset indexing and the procedural toy world.

Two sources feed the rest of the package:

* real trees laid out as ``<root>/<split>/<view>/<location>/<images>``
  (University-1652 style), indexed by :func:`scan_dataset`;
* a seeded toy world of flat-coloured top-down scenes
  (:func:`generate_toy_world`), where every object has an exact box and the
  scene carries the facts the mock captioner needs.

Coordinates are normalised to ``[0, 1]`` with ``y`` growing southwards
(image rows), so "north" is the top of the image.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

VIEWS = ("drone", "satellite")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}

# drone render jitter ranges; chosen so every object keeps a visible part
MAX_ROTATION_DEG = 15.0
MAX_ZOOM = 1.1
MAX_OFFSET = 0.04

BUILDING_COLOURS = {
    "red": (0.78, 0.16, 0.14),
    "orange": (0.92, 0.52, 0.12),
    "yellow": (0.93, 0.85, 0.25),
    "white": (0.95, 0.95, 0.93),
    "purple": (0.52, 0.26, 0.62),
    "brown": (0.45, 0.28, 0.15),
}
GROUND_COLOURS = (
    (0.55, 0.50, 0.38),
    (0.42, 0.52, 0.30),
    (0.60, 0.58, 0.52),
    (0.48, 0.44, 0.40),
)
ROAD_COLOUR = ("gray", (0.30, 0.30, 0.32))
POND_COLOUR = ("blue", (0.15, 0.35, 0.70))
FIELD_COLOURS = {"green": (0.20, 0.58, 0.22), "olive": (0.50, 0.55, 0.18)}
PAINT_ORDER = {"field": 0, "pond": 1, "road": 2, "building": 3}


class DatasetError(ValueError):
    """Raised for structurally invalid dataset trees or indices."""


# --------------------------------------------------------------------------
# index of a real (or toy, written-to-disk) tree


@dataclass(frozen=True)
class IndexEntry:
    location_id: int
    view: str
    image_ref: str


@dataclass
class DatasetIndex:
    entries: list[IndexEntry]
    num_locations: int
    location_names: list[str] = field(default_factory=list)

    def of_view(self, view: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.view == view]

    def by_location(self, view: str) -> dict[int, list[IndexEntry]]:
        out: dict[int, list[IndexEntry]] = {i: [] for i in range(self.num_locations)}
        for e in self.entries:
            if e.view == view:
                out[e.location_id].append(e)
        return out


def scan_dataset(root, split: str) -> DatasetIndex:
    """Index ``<root>/<split>/{drone,satellite}/<location>/<image files>``.

    Location directories are sorted by name and numbered ``0..C-1``. Both
    views must hold the same set of locations and every location directory
    must contain at least one image.
    """
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split {split!r}")
    base = Path(root) / split
    if not Path(root).is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    view_locs: dict[str, dict[str, list[Path]]] = {}
    for view in VIEWS:
        vdir = base / view
        if not vdir.is_dir():
            raise DatasetError(f"missing view directory: {vdir}")
        locs = {}
        for loc_dir in sorted(p for p in vdir.iterdir() if p.is_dir()):
            locs[loc_dir.name] = sorted(
                p for p in loc_dir.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
            )
        view_locs[view] = locs

    names = sorted(set(view_locs["drone"]) | set(view_locs["satellite"]))
    if not names:
        raise DatasetError(f"no location directories under {base}")
    ids = {name: i for i, name in enumerate(names)}
    empty = []
    for view in VIEWS:
        for name in names:
            if not view_locs[view].get(name):
                empty.append(f"{ids[name]} ({view}/{name})")
    if empty:
        raise DatasetError("locations without images: " + ", ".join(empty))

    entries = [
        IndexEntry(ids[name], view, str(path))
        for view in ("satellite", "drone")
        for name in names
        for path in view_locs[view][name]
    ]
    return DatasetIndex(entries=entries, num_locations=len(names), location_names=names)


def sample_region_representative(index: DatasetIndex, seed: int) -> dict[int, str]:
    """Pick one drone image per location, reproducibly for a given seed."""
    rng = np.random.default_rng(seed)
    per_loc = index.by_location("drone")
    out = {}
    for loc in range(index.num_locations):
        refs = [e.image_ref for e in per_loc[loc]]
        if not refs:
            raise DatasetError(f"location {loc} has no drone views")
        out[loc] = refs[int(rng.integers(len(refs)))]
    return out


# --------------------------------------------------------------------------
# toy world


@dataclass(frozen=True)
class GroundTruthRegion:
    """Normalised centre-size box ``(cx, cy, w, h)`` with a short label."""

    box: tuple[float, float, float, float]
    label_text: str
    object_id: int = -1

    @property
    def area(self) -> float:
        return self.box[2] * self.box[3]

    def is_valid(self, tol: float = 1e-6) -> bool:
        cx, cy, w, h = self.box
        return (
            w > 0 and h > 0
            and cx - w / 2 >= -tol and cx + w / 2 <= 1 + tol
            and cy - h / 2 >= -tol and cy + h / 2 <= 1 + tol
        )


@dataclass(frozen=True)
class ToyObject:
    object_id: int
    kind: str  # building | road | pond | field
    colour: str
    rgb: tuple[float, float, float]
    # rectangles: (cx, cy, w, h); roads: (x0, y0, x1, y1, width)
    geometry: tuple[float, ...]

    @property
    def label(self) -> str:
        return f"{self.colour} {self.kind}"

    def scene_bbox(self) -> tuple[float, float, float, float]:
        """Axis-aligned corner box ``(x1, y1, x2, y2)`` in scene coordinates."""
        if self.kind == "road":
            x0, y0, x1, y1, width = self.geometry
            r = width / 2
            return min(x0, x1) - r, min(y0, y1) - r, max(x0, x1) + r, max(y0, y1) + r
        cx, cy, w, h = self.geometry
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


@dataclass
class ToyScene:
    location_id: int
    ground_rgb: tuple[float, float, float]
    objects: list[ToyObject]
    facts: dict
    drone_jitter_seeds: list[int]


@dataclass
class ToyWorld:
    seed: int
    scenes: list[ToyScene]

    @property
    def num_locations(self) -> int:
        return len(self.scenes)

    def index(self) -> DatasetIndex:
        """In-memory index whose image refs are ``toy:<loc>:<view>:<k>`` handles."""
        entries = []
        for s in self.scenes:
            entries.append(IndexEntry(s.location_id, "satellite", f"toy:{s.location_id}:satellite:0"))
        for s in self.scenes:
            for k in range(len(s.drone_jitter_seeds)):
                entries.append(IndexEntry(s.location_id, "drone", f"toy:{s.location_id}:drone:{k}"))
        names = [f"{s.location_id:04d}" for s in self.scenes]
        return DatasetIndex(entries=entries, num_locations=len(self.scenes), location_names=names)


def _quadrant(x: float, y: float) -> str:
    ns = "north" if y < 0.45 else ("south" if y > 0.55 else "")
    ew = "west" if x < 0.45 else ("east" if x > 0.55 else "")
    if ns and ew:
        return f"{ns}-{ew}"
    return ns or ew or "centre"


def _direction(a: ToyObject, b: ToyObject) -> str:
    ax1, ay1, ax2, ay2 = a.scene_bbox()
    bx1, by1, bx2, by2 = b.scene_bbox()
    dx = (ax1 + ax2) / 2 - (bx1 + bx2) / 2
    dy = (ay1 + ay2) / 2 - (by1 + by2) / 2
    if abs(dx) >= abs(dy):
        return "east of" if dx > 0 else "west of"
    return "south of" if dy > 0 else "north of"


def _road_orientation(obj: ToyObject) -> str:
    x0, y0, x1, y1, _ = obj.geometry
    angle = math.degrees(math.atan2(abs(y1 - y0), abs(x1 - x0)))
    if angle < 20:
        return "east-west"
    if angle > 70:
        return "north-south"
    return "diagonal"


def _scene_facts(objects: list[ToyObject], ground_rgb) -> dict:
    counts = {k: sum(o.kind == k for o in objects) for k in PAINT_ORDER}
    buildings = [o for o in objects if o.kind == "building"]
    bx = float(np.mean([o.geometry[0] for o in buildings])) if buildings else 0.5
    by = float(np.mean([o.geometry[1] for o in buildings])) if buildings else 0.5
    # open-space fraction on a coarse raster of the scene
    covered = _paint_mask(objects, 32)
    open_pct = int(round(100 * (1.0 - covered.mean()) / 10.0) * 10)
    ranked = sorted(objects, key=lambda o: _bbox_area(o.scene_bbox()), reverse=True)[:3]
    relations = [
        f"the {a.label} is {_direction(a, b)} the {b.label}"
        for i, a in enumerate(ranked) for b in ranked[i + 1:]
    ]
    largest = max(buildings, key=lambda o: o.geometry[2] * o.geometry[3]) if buildings else None
    if largest is not None:
        w, h = largest.geometry[2], largest.geometry[3]
        shape = "square" if max(w, h) / min(w, h) < 1.3 else "elongated"
    else:
        shape = "none"
    return {
        "counts": counts,
        "building_colours": sorted(o.colour for o in buildings),
        "building_cluster": _quadrant(bx, by),
        "road_orientations": [_road_orientation(o) for o in objects if o.kind == "road"],
        "open_space_pct": open_pct,
        "largest_building_shape": shape,
        "relations": relations,
    }


def _bbox_area(b) -> float:
    return max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)


def _paint_mask(objects: list[ToyObject], size: int) -> np.ndarray:
    c = (np.arange(size) + 0.5) / size
    xs, ys = np.meshgrid(c, c)
    mask = np.zeros((size, size), dtype=bool)
    for o in objects:
        mask |= _object_mask(o, xs, ys)
    return mask


def _object_mask(o: ToyObject, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if o.kind == "road":
        x0, y0, x1, y1, width = o.geometry
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        dist2 = (xs - x0 - t * dx) ** 2 + (ys - y0 - t * dy) ** 2
        return dist2 <= (width / 2) ** 2
    cx, cy, w, h = o.geometry
    return (np.abs(xs - cx) <= w / 2) & (np.abs(ys - cy) <= h / 2)


def _rect(rng, lo_size, hi_size, lo=0.18, hi=0.82):
    w = float(rng.uniform(lo_size, hi_size))
    h = float(rng.uniform(lo_size, hi_size))
    cx = float(rng.uniform(lo + w / 2, hi - w / 2))
    cy = float(rng.uniform(lo + h / 2, hi - h / 2))
    return (cx, cy, w, h)


def _road(rng):
    style = rng.integers(3)
    a, b = float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8))
    width = float(rng.uniform(0.03, 0.06))
    if style == 0:  # east-west
        return (0.05, a, 0.95, a + float(rng.uniform(-0.05, 0.05)), width)
    if style == 1:  # north-south
        return (a + float(rng.uniform(-0.05, 0.05)), 0.05, a, 0.95, width)
    return (0.05, a * 0.4 + 0.05, 0.95, 0.95 - b * 0.4, width)


def _make_scene(rng: np.random.Generator, location_id: int, drones: int) -> ToyScene:
    ground = GROUND_COLOURS[int(rng.integers(len(GROUND_COLOURS)))]
    specs: list[tuple[str, str, tuple, tuple]] = []
    if rng.random() < 0.4:
        name = sorted(FIELD_COLOURS)[int(rng.integers(len(FIELD_COLOURS)))]
        specs.append(("field", name, FIELD_COLOURS[name], _rect(rng, 0.2, 0.35)))
    if rng.random() < 0.5:
        specs.append(("pond", POND_COLOUR[0], POND_COLOUR[1], _rect(rng, 0.1, 0.22)))
    for _ in range(int(rng.integers(0, 3))):
        specs.append(("road", ROAD_COLOUR[0], ROAD_COLOUR[1], _road(rng)))
    n_buildings = int(rng.integers(1, 5))
    n_buildings = max(n_buildings, 3 - len(specs))
    names = sorted(BUILDING_COLOURS)
    for _ in range(n_buildings):
        name = names[int(rng.integers(len(names)))]
        specs.append(("building", name, BUILDING_COLOURS[name], _rect(rng, 0.08, 0.25)))
    specs.sort(key=lambda s: PAINT_ORDER[s[0]])
    objects = [
        ToyObject(i, kind, colour, tuple(rgb), tuple(geom))
        for i, (kind, colour, rgb, geom) in enumerate(specs)
    ]
    jitter = [int(s) for s in rng.integers(0, 2**31 - 1, size=drones)]
    return ToyScene(location_id, tuple(ground), objects, _scene_facts(objects, ground), jitter)


def generate_toy_world(seed: int, num_locations: int, drones_per_location: int) -> ToyWorld:
    if num_locations < 1 or drones_per_location < 1:
        raise ValueError("num_locations and drones_per_location must be positive")
    scenes = []
    for loc in range(num_locations):
        rng = np.random.default_rng([seed, loc])
        scenes.append(_make_scene(rng, loc, drones_per_location))
    return ToyWorld(seed=seed, scenes=scenes)


# --------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class ViewTransform:
    rotation: float = 0.0  # radians
    zoom: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def from_seed(cls, jitter_seed: int) -> "ViewTransform":
        rng = np.random.default_rng(jitter_seed)
        rot = math.radians(float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)))
        zoom = float(rng.uniform(1.0, MAX_ZOOM))
        off = tuple(float(v) for v in rng.uniform(-MAX_OFFSET, MAX_OFFSET, size=2))
        return cls(rot, zoom, off)

    def to_view(self, x, y):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x, y = np.asarray(x) - 0.5, np.asarray(y) - 0.5
        u = self.zoom * (c * x - s * y) + 0.5 + self.offset[0]
        v = self.zoom * (s * x + c * y) + 0.5 + self.offset[1]
        return u, v

    def to_scene(self, u, v):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        u = (np.asarray(u) - 0.5 - self.offset[0]) / self.zoom
        v = (np.asarray(v) - 0.5 - self.offset[1]) / self.zoom
        return c * u + s * v + 0.5, -s * u + c * v + 0.5


def clamp_box(x1: float, y1: float, x2: float, y2: float) -> tuple[float, float, float, float]:
    """Clip a corner box to the unit square and return it in centre-size form."""
    x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
    y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def _transform_region(obj: ToyObject, tf: ViewTransform) -> GroundTruthRegion:
    x1, y1, x2, y2 = obj.scene_bbox()
    u, v = tf.to_view(np.array([x1, x2, x2, x1]), np.array([y1, y1, y2, y2]))
    box = clamp_box(float(u.min()), float(v.min()), float(u.max()), float(v.max()))
    return GroundTruthRegion(box, obj.label, obj.object_id)


def render_scene(scene: ToyScene, tf: ViewTransform, size: int = 64):
    c = (np.arange(size) + 0.5) / size
    us, vs = np.meshgrid(c, c)
    xs, ys = tf.to_scene(us, vs)
    img = np.empty((size, size, 3))
    img[:] = scene.ground_rgb
    for obj in sorted(scene.objects, key=lambda o: (PAINT_ORDER[o.kind], o.object_id)):
        img[_object_mask(obj, xs, ys)] = obj.rgb
        if obj.kind == "building":
            # darker roof ridge so buildings carry some internal structure
            cx, cy, w, h = obj.geometry
            ridge = (np.abs(xs - cx) <= w / 6) & (np.abs(ys - cy) <= h / 2)
            img[ridge] = np.asarray(obj.rgb) * 0.75
    regions = [_transform_region(o, tf) for o in scene.objects]
    return img, regions


def render_views(scene: ToyScene, view_kind: str, jitter_seed: int = 0, size: int = 64):
    """Render a scene as seen by ``view_kind``.

    Satellite views use the canonical transform and ignore ``jitter_seed``;
    drone views apply a seeded rotation, zoom and offset. Returns the image
    and the scene's regions mapped through the same transform.
    """
    if view_kind == "satellite":
        tf = ViewTransform()
    elif view_kind == "drone":
        tf = ViewTransform.from_seed(jitter_seed)
    else:
        raise ValueError(f"unknown view kind {view_kind!r}")
    return render_scene(scene, tf, size)


def render_ref(world: ToyWorld, ref: str, size: int = 64):
    """Render a ``toy:<loc>:<view>:<k>`` handle."""
    _, loc, view, k = ref.split(":")
    scene = world.scenes[int(loc)]
    seed = scene.drone_jitter_seeds[int(k)] if view == "drone" else 0
    return render_views(scene, view, seed, size)


def load_image(ref: str, size: int | None = None, world: ToyWorld | None = None) -> np.ndarray:
    """Load an image reference as a float ``H x W x 3`` array in ``[0, 1]``."""
    if ref.startswith("toy:"):
        if world is None:
            raise ValueError("toy references need the world they came from")
        return render_ref(world, ref, size or 64)[0]
    from PIL import Image

    with Image.open(ref) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


# --------------------------------------------------------------------------
# serialisation


def _scene_record(world_seed: int, scene: ToyScene) -> dict:
    return {
        "seed": world_seed,
        "location_id": scene.location_id,
        "ground_rgb": list(scene.ground_rgb),
        "objects": [
            {**asdict(o), "rgb": list(o.rgb), "geometry": list(o.geometry),
             "box": list(clamp_box(*o.scene_bbox()))}
            for o in scene.objects
        ],
        "facts": scene.facts,
        "drone_jitter_seeds": scene.drone_jitter_seeds,
    }


def dumps_world(world: ToyWorld) -> str:
    """One JSON record per line, one line per scene."""
    return "".join(
        json.dumps(_scene_record(world.seed, s), sort_keys=True) + "\n" for s in world.scenes
    )


def save_world(world: ToyWorld, path) -> None:
    Path(path).write_text(dumps_world(world))


def load_world(path) -> ToyWorld:
    scenes, seed = [], None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        seed = rec["seed"]
        objects = [
            ToyObject(o["object_id"], o["kind"], o["colour"], tuple(o["rgb"]), tuple(o["geometry"]))
            for o in rec["objects"]
        ]
        scenes.append(ToyScene(rec["location_id"], tuple(rec["ground_rgb"]), objects,
                               rec["facts"], list(rec["drone_jitter_seeds"])))
    if seed is None:
        raise DatasetError(f"empty world file: {path}")
    return ToyWorld(seed=seed, scenes=scenes)


def write_toy_tree(world: ToyWorld, root, split: str, size: int = 64) -> None:
    """Write the world's renders as PNGs in the scan_dataset layout."""
    from PIL import Image

    for scene in world.scenes:
        name = f"{scene.location_id:04d}"
        refs = [("satellite", "satellite.png", 0)] + [
            ("drone", f"drone_{k:02d}.png", s) for k, s in enumerate(scene.drone_jitter_seeds)
        ]
        for view, fname, seed in refs:
            img, _ = render_views(scene, view, seed, size)
            d = Path(root) / split / view / name
            d.mkdir(parents=True, exist_ok=True)
            Image.fromarray(np.round(img * 255).astype(np.uint8)).save(d / fname)
