"""Synthetic datasets: the two-class ring and the marker rotation-estimation task.

Rotation task
-------------
A scene holds three oriented triangles (yellow, orange, green) inside a disc
workspace.  A sample is a pair of renders: the scene, and the same scene with
every marker pose rotated by ``g in C8`` about the workspace center.  The label
is the index of ``g``.  Renders are 4-channel (RGB + surface height) from a
pinhole camera at a configurable elevation; 90 degrees is the top-down view.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .groups import FiniteAction, GroupElement, act_on_image, make_group, resolve_mode
from .diagnostics import SymmetryInstance

GENERATOR_VERSION = "1"
ORANGE, BLUE = 1, 0
COLORS = ("yellow", "orange", "green")
# dyadic values keep supersampled pixel sums exact under pixel permutations
RGB = {"yellow": (1.0, 1.0, 0.0), "orange": (1.0, 0.5, 0.0), "green": (0.0, 0.75, 0.25)}
HEIGHT = {"yellow": 0.0625, "orange": 0.125, "green": 0.1875}
GROUND = (0.25, 0.25, 0.25)
GRID_LINE = (0.5, 0.5, 0.75)
CORRUPTIONS = ("none", "oblique", "invert-label", "fixed-background-grid")
N_ROTATIONS = 8
# mean absolute render difference accepted as "same pair"; 45 degree bilinear
# resampling of top-down renders stays below ~0.004, oblique views exceed ~0.011
PAIR_TOL = 0.007


# ---------------------------------------------------------------------------
# ring dataset

@dataclass
class RingDataset:
    points: np.ndarray
    labels: np.ndarray
    r_in: float
    r_out: float
    named: dict[str, np.ndarray] = field(default_factory=dict)

    def membership(self, tol: float = 1e-9):
        """Exact support predicate: inside the annulus, labelled by the true function."""
        def oracle(point):
            r = float(np.hypot(*point))
            inside = self.r_in - tol <= r <= self.r_out + tol
            return inside, ring_label(point)
        return oracle

    def to_dict(self) -> dict:
        return {
            "kind": "ring",
            "n": len(self.labels),
            "points": self.points.tolist(),
            "labels": self.labels.tolist(),
            "r_in": self.r_in,
            "r_out": self.r_out,
            "named": {k: v.tolist() for k, v in self.named.items()},
            "generator_version": GENERATOR_VERSION,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RingDataset":
        if doc.get("kind") != "ring":
            raise ValueError("not a ring dataset document")
        points = np.asarray(doc["points"], dtype=float).reshape(-1, 2)
        labels = np.asarray(doc["labels"], dtype=np.int64)
        if len(points) != len(labels):
            raise ValueError("ring dataset needs one label per point")
        named = {k: np.asarray(v, dtype=float) for k, v in doc.get("named", {}).items()}
        return cls(points, labels, float(doc["r_in"]), float(doc["r_out"]), named)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        return path


RING_ACTIONS = ("reflect", "rot_pi", "scale:<factor>", "rotate:<degrees>")


def ring_transform(spec: str):
    """Named planar maps used on the ring dataset."""
    name, _, arg = spec.partition(":")
    if name == "reflect":
        return lambda p: np.asarray(p) * np.array([1.0, -1.0])
    if name == "rot_pi":
        return lambda p: -np.asarray(p)
    if name == "scale":
        factor = float(arg or 2.0)
        return lambda p: factor * np.asarray(p)
    if name == "rotate":
        t = np.deg2rad(float(arg))
        m = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        return lambda p: m @ np.asarray(p)
    raise ValueError(f"unknown ring action {spec!r}; expected one of {RING_ACTIONS}")


def ring_label(point) -> int:
    """orange right of the vertical axis, blue otherwise."""
    return ORANGE if point[0] > 0 else BLUE


def named_ring_points() -> dict[str, np.ndarray]:
    a = np.sqrt(2.0) / 2.0
    return {
        "(a,a)": np.array([a, a]),
        "(-a,-a)": np.array([-a, -a]),
        "(-a,a)": np.array([-a, a]),
        "(b,c)": np.array([0.8, 0.6]),
    }


def make_ring_dataset(n: int, noise: float = 0.0, seed: int = 0, include_named: bool = True) -> RingDataset:
    """``n`` points on an annulus of radius 1 +- noise, labelled by ``ring_label``."""
    if n < 4:
        raise ValueError("ring dataset needs n >= 4")
    rng = np.random.default_rng(seed)
    named = named_ring_points() if include_named else {}
    pts = list(named.values())
    while len(pts) < n:
        theta = rng.uniform(0, 2 * np.pi)
        r = 1.0 + noise * rng.uniform(-1, 1)
        p = np.array([r * np.cos(theta), r * np.sin(theta)])
        if abs(p[0]) > 1e-6:
            pts.append(p)
    points = np.array(pts[:n])
    labels = np.array([ring_label(p) for p in points])
    return RingDataset(points, labels, 1.0 - noise, 1.0 + noise, named)


def ring_instance(dataset: RingDataset, group_spec: str = "rot_pi") -> SymmetryInstance:
    """Finite instance on the dataset closed under the named group.

    ``rot_pi`` adds the antipode of every point, ``reflect`` its mirror image
    across the horizontal axis.
    """
    if group_spec == "rot_pi":
        group = make_group("cyclic", 2)
        image = -dataset.points
    elif group_spec == "reflect":
        group = make_group("dihedral", 1)
        image = dataset.points * np.array([1.0, -1.0])
    else:
        raise ValueError(f"unknown ring group {group_spec!r}")
    pts = np.concatenate([dataset.points, image])
    pts = np.unique(np.round(pts, 12), axis=0)
    action = FiniteAction.from_points(group, pts, tol=1e-9)
    labels = tuple(ring_label(p) for p in pts)
    return SymmetryInstance(action, labels, None, 2)


# ---------------------------------------------------------------------------
# scenes

@dataclass(frozen=True)
class RenderConfig:
    size: int = 39
    crop: int = 31
    workspace_radius: float = 0.45
    marker_length: float = 0.45
    marker_width: float = 0.3
    min_separation: float = 0.4
    camera_distance: float = 4.0
    frame_half_width: float = 0.9
    supersample: int = 3

    def __post_init__(self):
        if self.size % 2 == 0 or self.crop % 2 == 0:
            raise ValueError("render and crop sizes must be odd")
        if self.crop > self.size:
            raise ValueError("crop larger than render")


@dataclass(frozen=True)
class Marker:
    color: str
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class Scene:
    markers: tuple[Marker, ...]
    vertices: np.ndarray = field(repr=False, compare=False)  # (3 markers, 3 corners, 2)
    rotation_steps: int = 0

    def marker(self, color: str) -> Marker:
        return next(m for m in self.markers if m.color == color)

    def to_dict(self) -> dict:
        return {"markers": [asdict(m) for m in self.markers], "rotation_steps": self.rotation_steps}

    @classmethod
    def from_dict(cls, doc: dict, config: RenderConfig) -> "Scene":
        scene = make_scene([Marker(**m) for m in doc["markers"]], config)
        return replace(scene, rotation_steps=int(doc.get("rotation_steps", 0)))


def _triangle(m: Marker, config: RenderConfig) -> np.ndarray:
    d = np.array([np.cos(m.theta), np.sin(m.theta)])
    perp = np.array([-d[1], d[0]])
    center = np.array([m.x, m.y])
    length, width = config.marker_length, config.marker_width
    tip = center + d * (2.0 * length / 3.0)
    back = center - d * (length / 3.0)
    return np.stack([tip, back + perp * width / 2, back - perp * width / 2])


def make_scene(markers: Sequence[Marker], config: RenderConfig) -> Scene:
    return Scene(tuple(markers), np.stack([_triangle(m, config) for m in markers]))


def rotate_scene(scene: Scene, steps: int) -> Scene:
    """Rotate every marker pose by ``steps * 45`` degrees about the workspace center.

    Quarter turns are applied with exact integer matrices so that a top-down
    render of the rotated scene is an exact pixel permutation of the original.
    """
    g = make_group("cyclic", N_ROTATIONS).element(steps)
    m = g.matrix()
    markers = tuple(
        Marker(mk.color, *map(float, m @ np.array([mk.x, mk.y])), float((mk.theta + g.angle) % (2 * np.pi)))
        for mk in scene.markers
    )
    return Scene(markers, scene.vertices @ m.T, (scene.rotation_steps + steps) % N_ROTATIONS)


def random_scene(rng: np.random.Generator, config: RenderConfig) -> Scene:
    while True:
        markers = []
        for color in COLORS:
            r = config.workspace_radius * np.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * np.pi)
            markers.append(Marker(color, float(r * np.cos(phi)), float(r * np.sin(phi)),
                                  float(rng.uniform(0, 2 * np.pi))))
        centers = np.array([[m.x, m.y] for m in markers])
        gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)[np.triu_indices(3, 1)]
        if gaps.min() >= config.min_separation:
            return make_scene(markers, config)


# ---------------------------------------------------------------------------
# rendering

@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking at the workspace center from ``elevation`` degrees."""

    elevation: float = 90.0

    def __post_init__(self):
        if not 0.0 < self.elevation <= 90.0:
            raise ValueError("view angle must lie in (0, 90] degrees")

    @property
    def top_down(self) -> bool:
        return self.elevation == 90.0

    def cos_sin(self) -> tuple[float, float]:
        if self.top_down:
            return 0.0, 1.0
        e = np.deg2rad(self.elevation)
        return float(np.cos(e)), float(np.sin(e))


TOP_DOWN = Camera(90.0)


def _image_plane(config: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Supersampled image-plane coordinates, shape (s*s, size, size)."""
    size, s = config.size, config.supersample
    c = (size - 1) // 2
    offsets = (np.arange(s) - (s - 1) / 2) / s
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    du, dv = np.meshgrid(offsets, offsets, indexing="ij")
    u = (j[None] - c) + du.reshape(-1, 1, 1)
    v = (c - i[None]) + dv.reshape(-1, 1, 1)
    pix = config.frame_half_width / (config.camera_distance * size / 2.0)
    return u * pix, v * pix


def _edge(a, b, px, py):
    return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])


def _inside(tri: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    e0 = _edge(tri[0], tri[1], px, py)
    e1 = _edge(tri[1], tri[2], px, py)
    e2 = _edge(tri[2], tri[0], px, py)
    return ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))


def _background_grid(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """World-fixed grid lines with unequal periods, so no rotation maps it to itself."""
    return (np.mod(px - 0.13, 0.4) < 0.05) | (np.mod(py + 0.07, 0.55) < 0.05)


def render_scene(scene: Scene, camera: Camera = TOP_DOWN, config: RenderConfig = RenderConfig(),
                 background_grid: bool = False) -> np.ndarray:
    """Rasterize ``scene`` into a [4, size, size] array (RGB + surface height)."""
    cos_e, sin_e = camera.cos_sin()
    dist = config.camera_distance
    u, v = _image_plane(config)
    # ray direction d = forward + u * right + v * up, camera at dist * (0, -cos, sin)
    dx = u
    dy = cos_e + v * sin_e
    dz = -sin_e + v * cos_e
    cz = dist * sin_e
    cy = -dist * cos_e
    shape = u.shape
    best_t = np.full(shape, np.inf)
    color = np.empty((3,) + shape)
    height = np.zeros(shape)
    t_ground = -cz / dz
    gx, gy = t_ground * dx, cy + t_ground * dy
    for ch in range(3):
        color[ch] = GROUND[ch]
    if background_grid:
        line = _background_grid(gx, gy)
        for ch in range(3):
            color[ch] = np.where(line, GRID_LINE[ch], color[ch])
    for marker, tri in zip(scene.markers, scene.vertices):
        h = HEIGHT[marker.color]
        t = (h - cz) / dz
        px, py = t * dx, cy + t * dy
        hit = _inside(tri, px, py) & (t < best_t)
        best_t = np.where(hit, t, best_t)
        for ch in range(3):
            color[ch] = np.where(hit, RGB[marker.color][ch], color[ch])
        height = np.where(hit, h, height)
    image = np.concatenate([color, height[None]], axis=0)  # (4, s*s, size, size)
    return image.sum(axis=1) / shape[0]


def project(points_xyz: np.ndarray, camera: Camera, config: RenderConfig) -> np.ndarray:
    """Pixel (row, col) of world points, for frame checks."""
    cos_e, sin_e = camera.cos_sin()
    dist = config.camera_distance
    cam = np.array([0.0, -dist * cos_e, dist * sin_e])
    fwd = np.array([0.0, cos_e, -sin_e])
    right = np.array([1.0, 0.0, 0.0])
    up = np.array([0.0, sin_e, cos_e])
    rel = points_xyz - cam
    depth = rel @ fwd
    u = (rel @ right) / depth
    v = (rel @ up) / depth
    pix = config.frame_half_width / (dist * config.size / 2.0)
    c = (config.size - 1) / 2
    return np.stack([c - v / pix, c + u / pix], axis=-1)


def scene_in_frame(scene: Scene, camera: Camera, config: RenderConfig, margin: float = 1.0) -> bool:
    pts = np.concatenate([
        np.column_stack([tri, np.full(3, HEIGHT[m.color])])
        for m, tri in zip(scene.markers, scene.vertices)
    ])
    rc = project(pts, camera, config)
    lo, hi = margin, config.size - 1 - margin
    return bool(np.all((rc >= lo) & (rc <= hi)))


# ---------------------------------------------------------------------------
# rotation-pair datasets

@dataclass(frozen=True)
class Corruption:
    kind: str = "none"
    view_angle: float = 45.0

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.kind!r}; expected one of {CORRUPTIONS}")
        Camera(self.view_angle)

    @property
    def camera(self) -> Camera:
        return Camera(self.view_angle) if self.kind == "oblique" else TOP_DOWN

    @property
    def background_grid(self) -> bool:
        return self.kind == "fixed-background-grid"

    def to_dict(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "oblique":
            doc["view_angle"] = self.view_angle
        return doc

    @classmethod
    def parse(cls, spec) -> "Corruption":
        if isinstance(spec, Corruption):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], spec.get("view_angle", 45.0))
        kind, _, angle = str(spec).partition(":")
        return cls(kind, float(angle)) if angle else cls(kind)


def yellow_left_of_orange(scene: Scene) -> bool:
    """World-frame predicate used by the invert-label corruption."""
    return scene.marker("yellow").x < scene.marker("orange").x


def pair_label(scene: Scene, steps: int, corruption: Corruption) -> int:
    if corruption.kind == "invert-label" and yellow_left_of_orange(scene):
        return (-steps) % N_ROTATIONS
    return steps % N_ROTATIONS


def render_pair(scene: Scene, steps: int, corruption: Corruption, config: RenderConfig) -> np.ndarray:
    cam = corruption.camera
    grid = corruption.background_grid
    a = render_scene(scene, cam, config, grid)
    b = render_scene(rotate_scene(scene, steps), cam, config, grid)
    return np.stack([a, b])


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


@dataclass
class PairDataset:
    images: np.ndarray  # (N, 2, 4, size, size)
    labels: np.ndarray
    rotations: np.ndarray  # true relative rotation index
    scenes: list[Scene]
    splits: dict[str, np.ndarray]
    corruption: Corruption
    seed: int
    config: RenderConfig = RenderConfig()

    def __len__(self) -> int:
        return len(self.labels)

    def inputs(self, index=None) -> np.ndarray:
        """Stack each pair into one [8, size, size] tensor."""
        imgs = self.images if index is None else self.images[index]
        return imgs.reshape(imgs.shape[0], -1, *imgs.shape[-2:])

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.inputs(idx), self.labels[idx]

    def sidecar(self) -> dict:
        return {
            "kind": "rotation-pairs",
            "n": len(self),
            "shape": list(self.images.shape),
            "dtype": "<f8",
            "labels": self.labels.tolist(),
            "rotations": self.rotations.tolist(),
            "corruption": self.corruption.to_dict(),
            "seed": self.seed,
            "splits": {k: v.tolist() for k, v in self.splits.items()},
            "render": asdict(self.config),
            "scenes": [s.to_dict() for s in self.scenes],
            "generator_version": GENERATOR_VERSION,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.images.astype("<f8").tofile(directory / "images.bin")
        (directory / "dataset.json").write_text(json.dumps(self.sidecar(), sort_keys=True, indent=1))
        return directory

    @classmethod
    def load(cls, path) -> "PairDataset":
        path = Path(path)
        sidecar_path = path / "dataset.json" if path.is_dir() else path
        doc = json.loads(sidecar_path.read_text())
        if doc.get("kind") != "rotation-pairs":
            raise ValueError(f"{sidecar_path} is not a rotation-pair dataset")
        config = RenderConfig(**doc["render"])
        images = np.fromfile(sidecar_path.parent / "images.bin", dtype="<f8").reshape(doc["shape"])
        return cls(
            images.astype(np.float64),
            np.array(doc["labels"], dtype=np.int64),
            np.array(doc["rotations"], dtype=np.int64),
            [Scene.from_dict(s, config) for s in doc["scenes"]],
            {k: np.array(v, dtype=np.int64) for k, v in doc["splits"].items()},
            Corruption.parse(doc["corruption"]),
            int(doc["seed"]),
            config,
        )


def make_rotation_pairs(n_train: int, corruption="none", seed: int = 0, n_val: int = 100,
                        n_test: int = 100, config: RenderConfig = RenderConfig()) -> PairDataset:
    """Generate a labelled pair dataset with a train/val/test split.

    Every sample draws from its own Philox stream keyed by (seed, index), so the
    result is a pure function of the arguments.
    """
    corruption = Corruption.parse(corruption)
    total = n_train + n_val + n_test
    if total < N_ROTATIONS:
        raise ValueError(f"need at least {N_ROTATIONS} samples so every class appears")
    order_rng = _sample_rng(seed, -1 % (2 ** 32))
    rotations = order_rng.permutation(np.arange(total) % N_ROTATIONS)
    images = np.empty((total, 2, 4, config.size, config.size))
    labels = np.empty(total, dtype=np.int64)
    scenes = []
    cam = corruption.camera
    for i in range(total):
        rng = _sample_rng(seed, i)
        steps = int(rotations[i])
        while True:
            scene = random_scene(rng, config)
            if scene_in_frame(scene, cam, config) and scene_in_frame(rotate_scene(scene, steps), cam, config):
                break
        scenes.append(scene)
        images[i] = render_pair(scene, steps, corruption, config)
        labels[i] = pair_label(scene, steps, corruption)
    splits = {
        "train": np.arange(n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, total),
    }
    return PairDataset(images, labels, rotations.astype(np.int64), scenes, splits, corruption, seed, config)


class PairRenderOracle:
    """Membership predicate for image-rotated pairs, backed by the renderer.

    The candidate preimage of ``g . (A, B)`` is the pair rendered from the scene
    rotated by ``g``; the transformed pair is in distribution when the mean
    absolute pixel difference to that render is at most ``tol``, and its true
    label is the label of the rotated scene.  Only the inscribed disc is
    compared, since image rotation moves the frame corners out of view.
    """

    def __init__(self, dataset: PairDataset, tol: float = PAIR_TOL):
        self.dataset = dataset
        self.tol = float(tol)
        size = dataset.config.size
        c = (size - 1) // 2
        i, j = np.mgrid[:size, :size]
        self.mask = (i - c) ** 2 + (j - c) ** 2 <= (c - 1) ** 2

    def transforms(self, group) -> list[tuple[str, object]]:
        return [(g.name, (lambda i, g=g: (i, g))) for g in group if g.index != 0]

    def classify(self, group, indices=None, max_witnesses: int = 5):
        """Verdict for the image action of ``group`` on the selected samples."""
        from .diagnostics import classify_action

        ds = self.dataset
        indices = range(len(ds)) if indices is None else indices
        samples = [int(i) for i in indices]
        return classify_action(
            samples, [int(ds.labels[i]) for i in samples], self.transforms(group), self,
            max_witnesses=max_witnesses, describe=self.describe,
        )

    def describe(self, item):
        if isinstance(item, tuple):
            i, g = item
            return {"sample": int(i), "g": g.name}
        return {"sample": int(item), "scene": self.dataset.scenes[item].to_dict()}

    def transformed_images(self, i: int, g: GroupElement) -> np.ndarray:
        mode = resolve_mode([g])
        return act_on_image(g, self.dataset.images[i], mode=mode)

    def __call__(self, item) -> tuple[bool, int]:
        i, g = item
        ds = self.dataset
        steps = g.rotation * (N_ROTATIONS // g.n)
        moved_scene = rotate_scene(ds.scenes[i], steps)
        rel = int(ds.rotations[i])
        candidate = render_pair(moved_scene, rel, ds.corruption, ds.config)
        diff = float(np.mean(np.abs(candidate - self.transformed_images(i, g))[..., self.mask]))
        return diff <= self.tol, pair_label(moved_scene, rel, ds.corruption)


def invert_label_instance(n_scenes: int = 8, seed: int = 0, config: RenderConfig = RenderConfig()) -> SymmetryInstance:
    """C8 orbit structure of the invert-label task as a finite instance.

    Carrier element ``(scene s, relative rotation r, global rotation h)`` is the
    pair rendered from ``s`` rotated by ``h``; C8 acts on ``h``.  Each scene is
    paired with every relative rotation once so labels are balanced.
    """
    corruption = Corruption("invert-label")
    group = make_group("cyclic", N_ROTATIONS)
    labels = []
    columns = []
    offset = 0
    for s in range(n_scenes):
        scene = random_scene(_sample_rng(seed, s), config)
        for rel in range(N_ROTATIONS):
            for h in range(N_ROTATIONS):
                labels.append(pair_label(rotate_scene(scene, h), rel, corruption))
            columns.append(offset + (np.arange(N_ROTATIONS)[:, None] + np.arange(N_ROTATIONS)[None, :]) % N_ROTATIONS)
            offset += N_ROTATIONS
    table = np.concatenate(columns, axis=1)
    return SymmetryInstance(FiniteAction(group, table), tuple(labels), None, N_ROTATIONS)
