"""Random-shapes target scenes and simulated video corpora on disk.

Layout of a dataset root::

    manifest.json
    <id>/target.png
    <id>/frames/000000.png ...
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DatasetError, GenerationError, InvalidInputError
from .imaging import check_image, read_png, write_png
from .sim import SimParams, WaterSurface, WaveRanges, random_surface, simulate_video

SHAPE_KINDS = ("square", "rectangle", "triangle", "circle", "ellipse")
SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ShapesConfig:
    min_shapes: int = 3
    max_shapes: int = 10
    allowed_shapes: tuple[str, ...] = SHAPE_KINDS
    image_size: tuple[int, int] = (128, 128)
    seed: int = 0
    # shape extents are drawn from [min_dim * lo, min_dim * hi]
    size_fraction: tuple[float, float] = (0.1, 1.0 / 3.0)
    background: tuple[float, float] = (0.8, 1.0)
    shape_color: tuple[float, float] = (0.0, 0.75)

    def __post_init__(self):
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise InvalidInputError("need 1 <= min_shapes <= max_shapes")
        if not self.allowed_shapes:
            raise InvalidInputError("allowed_shapes is empty")
        bad = set(self.allowed_shapes) - set(SHAPE_KINDS)
        if bad:
            raise InvalidInputError(f"unknown shape kinds {sorted(bad)}")
        object.__setattr__(self, "allowed_shapes", tuple(self.allowed_shapes))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))


@dataclass(frozen=True)
class Shape:
    kind: str
    color: tuple[float, float, float]
    # polygon vertices (x, y) for square/rectangle/triangle
    vertices: tuple[tuple[float, float], ...] = ()
    # centre and semi-axes for circle/ellipse
    centre: tuple[float, float] = (0.0, 0.0)
    radii: tuple[float, float] = (0.0, 0.0)


def sample_shapes(config: ShapesConfig, rng: np.random.Generator | None = None) -> tuple[tuple[float, ...], list[Shape]]:
    """Draw the background colour and shape list for one scene."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    h, w = config.image_size
    lo = min(h, w) * config.size_fraction[0]
    hi = min(h, w) * config.size_fraction[1]
    if lo < 2.0:
        raise GenerationError(f"image {h}x{w} is too small to place shapes")
    grey = float(rng.uniform(*config.background))
    count = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    kinds = sorted(config.allowed_shapes, key=SHAPE_KINDS.index)
    shapes = []
    for _ in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        color = tuple(float(c) for c in rng.uniform(*config.shape_color, size=3))
        a = float(rng.uniform(lo, hi))
        if kind in ("square", "rectangle", "triangle"):
            b = a if kind == "square" else float(rng.uniform(lo, hi))
            x0 = float(rng.uniform(0, w - a))
            y0 = float(rng.uniform(0, h - b))
            if kind == "triangle":
                verts = ((x0 + a / 2, y0), (x0 + a, y0 + b), (x0, y0 + b))
            else:
                verts = ((x0, y0), (x0 + a, y0), (x0 + a, y0 + b), (x0, y0 + b))
            shapes.append(Shape(kind, color, vertices=verts))
        else:
            rx = a / 2
            ry = rx if kind == "circle" else float(rng.uniform(lo, hi)) / 2
            cx = float(rng.uniform(rx, w - rx))
            cy = float(rng.uniform(ry, h - ry))
            shapes.append(Shape(kind, color, centre=(cx, cy), radii=(rx, ry)))
    return (grey, grey, grey), shapes


def _polygon_span(verts, yc: float):
    xs = []
    n = len(verts)
    for k in range(n):
        (x1, y1), (x2, y2) = verts[k], verts[(k + 1) % n]
        if (y1 <= yc < y2) or (y2 <= yc < y1):
            xs.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
    if len(xs) < 2:
        return None
    return min(xs), max(xs)


def _conic_span(centre, radii, yc: float):
    dy = (yc - centre[1]) / radii[1]
    if abs(dy) > 1.0:
        return None
    half = radii[0] * math.sqrt(1.0 - dy * dy)
    return centre[0] - half, centre[0] + half


def rasterize(shape: Shape, img: np.ndarray) -> None:
    """Scanline-fill ``shape`` into ``img`` in place (pixel centres, no anti-aliasing)."""
    h, w = img.shape[:2]
    for row in range(h):
        yc = row + 0.5
        if shape.vertices:
            span = _polygon_span(shape.vertices, yc)
        else:
            span = _conic_span(shape.centre, shape.radii, yc)
        if span is None:
            continue
        # pixel centre x = col + 0.5 must lie inside [x_left, x_right]
        c0 = max(0, math.ceil(span[0] - 0.5))
        c1 = min(w - 1, math.floor(span[1] - 0.5))
        if c1 >= c0:
            img[row, c0:c1 + 1] = shape.color[:img.shape[2]]


def generate_shapes(config: ShapesConfig) -> np.ndarray:
    """RGB scene of random opaque shapes over a light-grey background.

    Later shapes paint over earlier ones. The same config always yields the
    same image.
    """
    background, shapes = sample_shapes(config)
    h, w = config.image_size
    img = np.empty((h, w, 3))
    img[...] = background
    for shape in shapes:
        rasterize(shape, img)
    return img


@dataclass(frozen=True)
class SimConfig:
    fps: float = 50.0
    duration: float = 2.0
    params: SimParams = field(default_factory=SimParams)
    waves: WaveRanges = field(default_factory=WaveRanges)

    def to_json(self) -> dict:
        return {"fps": self.fps, "duration": self.duration,
                "params": self.params.to_json(), "waves": self.waves.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        return cls(fps=float(obj["fps"]), duration=float(obj["duration"]),
                   params=SimParams.from_json(obj["params"]),
                   waves=WaveRanges.from_json(obj["waves"]))


@dataclass
class ManifestEntry:
    id: str
    split: str
    target_path: str
    frames_dir: str
    fps: float
    frame_count: int
    surface_spec: dict
    sim_params: dict
    seed: int
    height: int
    width: int
    channels: int

    def surface(self) -> WaterSurface:
        return WaterSurface.from_json(self.surface_spec)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.9, 0.05, 0.05)
    sim_config: dict | None = None
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def by_id(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_json(self) -> dict:
        return {"version": self.version, "seed": self.seed,
                "split_fractions": list(self.split_fractions),
                "sim_config": self.sim_config,
                "entries": [asdict(e) for e in self.entries]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        entries = [ManifestEntry(**e) for e in obj["entries"]]
        return cls(entries=entries, seed=int(obj.get("seed", 0)),
                   split_fractions=tuple(obj.get("split_fractions", (0.9, 0.05, 0.05))),
                   sim_config=obj.get("sim_config"), version=int(obj.get("version", MANIFEST_VERSION)))


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Floor the val/test shares and give the remainder to train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidInputError(f"split fractions must be 3 nonnegative values summing to 1, got {fractions}")
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def assign_splits(n: int, fractions: Sequence[float], seed: int) -> list[str]:
    n_train, n_val, n_test = split_counts(n, fractions)
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    order = np.random.default_rng([seed, 1]).permutation(n)
    out = [""] * n
    for label, idx in zip(labels, order):
        out[int(idx)] = label
    return out


def entry_seeds(n: int, seed: int) -> list[int]:
    return [int(s) for s in np.random.default_rng([seed, 2]).integers(0, 2**31 - 1, size=n)]


def simulate_entry(target: np.ndarray, sim_config: SimConfig, seed: int):
    surface = random_surface(np.random.default_rng(seed), sim_config.waves)
    frames = simulate_video(target, surface, sim_config.fps, sim_config.duration, sim_config.params)
    return surface, frames


def build_dataset(targets: Sequence[np.ndarray], root: str | Path, sim_config: SimConfig = SimConfig(),
                  fractions: Sequence[float] = (0.9, 0.05, 0.05), seed: int = 0) -> DatasetManifest:
    """Simulate one video per target and write the dataset under ``root``."""
    if len(targets) == 0:
        raise InvalidInputError("need at least one target")
    root = Path(root)
    splits = assign_splits(len(targets), fractions, seed)
    seeds = entry_seeds(len(targets), seed)
    entries = []
    for k, (target, split, s) in enumerate(zip(targets, splits, seeds)):
        target = check_image(target)
        entry_id = f"v{k:05d}"
        surface, frames = simulate_entry(target, sim_config, s)
        frames_dir = root / entry_id / "frames"
        try:
            frames_dir.mkdir(parents=True, exist_ok=True)
            write_png(root / entry_id / "target.png", target)
            for i, frame in enumerate(frames):
                write_png(frames_dir / f"{i:06d}.png", frame)
        except OSError as exc:
            raise DatasetError(f"failed writing {exc.filename}: {exc.strerror}") from exc
        entries.append(ManifestEntry(
            id=entry_id, split=split, target_path=f"{entry_id}/target.png",
            frames_dir=f"{entry_id}/frames", fps=sim_config.fps, frame_count=len(frames),
            surface_spec=surface.to_json(), sim_params=sim_config.params.to_json(), seed=s,
            height=target.shape[0], width=target.shape[1], channels=target.shape[2]))
    manifest = DatasetManifest(entries, seed=seed, split_fractions=tuple(fractions),
                               sim_config=sim_config.to_json())
    try:
        (root / "manifest.json").write_text(manifest.dumps(), encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"failed writing {root / 'manifest.json'}: {exc.strerror}") from exc
    return manifest


class Dataset:
    """A validated manifest plus lazy access to the images it references."""

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = root
        self.manifest = manifest

    @property
    def entries(self) -> list[ManifestEntry]:
        return self.manifest.entries

    def split(self, name: str) -> list[ManifestEntry]:
        return self.manifest.split(name)

    def frame_paths(self, entry: ManifestEntry) -> list[Path]:
        return [self.root / entry.frames_dir / f"{i:06d}.png" for i in range(entry.frame_count)]

    def target(self, entry: ManifestEntry) -> np.ndarray:
        return read_png(self.root / entry.target_path)

    def iter_frames(self, entry: ManifestEntry) -> Iterator[np.ndarray]:
        for path in self.frame_paths(entry):
            yield read_png(path)

    def frames(self, entry: ManifestEntry) -> list[np.ndarray]:
        return list(self.iter_frames(entry))


def validate_manifest(root: Path, manifest: DatasetManifest, check_dims: bool = False) -> None:
    ids = [e.id for e in manifest.entries]
    if len(set(ids)) != len(ids):
        raise DatasetError("manifest ids are not unique")
    for e in manifest.entries:
        if e.split not in SPLITS:
            raise DatasetError(f"entry {e.id}: unknown split {e.split!r}")
        if not (root / e.target_path).is_file():
            raise DatasetError(f"entry {e.id}: missing target {e.target_path}")
        frames_dir = root / e.frames_dir
        for i in range(e.frame_count):
            if not (frames_dir / f"{i:06d}.png").is_file():
                raise DatasetError(f"entry {e.id}: missing frame {i:06d}.png")
        on_disk = len(list(frames_dir.glob("*.png"))) if frames_dir.is_dir() else 0
        if on_disk != e.frame_count:
            raise DatasetError(f"entry {e.id}: manifest lists {e.frame_count} frames, found {on_disk}")
        if check_dims:
            from PIL import Image as PILImage
            for path in [root / e.target_path, *sorted(frames_dir.glob("*.png"))]:
                try:
                    with PILImage.open(path) as im:
                        size = (im.height, im.width)
                except OSError as exc:
                    raise DatasetError(f"entry {e.id}: unreadable {path.name}: {exc}") from None
                if size != (e.height, e.width):
                    raise DatasetError(f"entry {e.id}: {path.name} is {size[0]}x{size[1]}, "
                                       f"expected {e.height}x{e.width}")


def read_dataset(path: str | Path, check_dims: bool = False) -> Dataset:
    """Load and validate ``manifest.json`` (or a directory containing it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        manifest = DatasetManifest.from_json(obj)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    validate_manifest(path.parent, manifest, check_dims)
    return Dataset(path.parent, manifest)
