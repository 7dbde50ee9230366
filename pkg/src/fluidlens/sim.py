"""Refractive wave-optics simulator for fluid-lensed video.

A straight-down orthographic camera views a flat target lying ``depth``
metres below the mean water level. Each pixel's viewing ray is refracted at
the surface point directly above the pixel and followed to the bottom plane;
the lateral offset of the hit point is the per-pixel displacement that the
rendered frame samples the target with.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, TotalInternalReflectionError
from .imaging import check_image, sample_bilinear

BORDER_POLICIES = ("clamp", "mark-invalid")


@dataclass(frozen=True)
class WaveComponent:
    amplitude: float
    wavelength: float
    direction: tuple[float, float]
    phase: float = 0.0
    speed: float = 0.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise InvalidInputError(f"wavelength must be > 0, got {self.wavelength}")
        if self.amplitude < 0:
            raise InvalidInputError(f"amplitude must be >= 0, got {self.amplitude}")
        dx, dy = (float(v) for v in self.direction)
        if abs(math.hypot(dx, dy) - 1.0) > 1e-9:
            raise InvalidInputError(f"direction must be a unit vector, got {self.direction}")
        object.__setattr__(self, "direction", (dx, dy))

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength


@dataclass(frozen=True)
class WaterSurface:
    components: tuple[WaveComponent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def max_slope(self) -> float:
        return sum(c.amplitude * c.wavenumber for c in self.components)

    @property
    def max_height(self) -> float:
        return sum(c.amplitude for c in self.components)

    @property
    def is_static(self) -> bool:
        return all(c.speed == 0 for c in self.components)

    def to_json(self) -> dict:
        return {"components": [
            {"amplitude": c.amplitude, "wavelength": c.wavelength, "direction": list(c.direction),
             "phase": c.phase, "speed": c.speed}
            for c in self.components]}

    @classmethod
    def from_json(cls, obj: dict) -> "WaterSurface":
        return cls(tuple(WaveComponent(amplitude=c["amplitude"], wavelength=c["wavelength"],
                                       direction=tuple(c["direction"]), phase=c["phase"],
                                       speed=c["speed"])
                         for c in obj["components"]))


@dataclass(frozen=True)
class SimParams:
    depth: float = 0.20
    pixel_pitch: float = 0.001
    n_air: float = 1.0
    n_water: float = 1.33
    border_policy: str = "clamp"

    def __post_init__(self):
        if not self.depth > 0:
            raise InvalidInputError("depth must be > 0")
        if not self.pixel_pitch > 0:
            raise InvalidInputError("pixel_pitch must be > 0")
        if not (self.n_water > self.n_air >= 1.0):
            raise InvalidInputError("need n_water > n_air >= 1")
        if self.border_policy not in BORDER_POLICIES:
            raise InvalidInputError(f"border_policy must be one of {BORDER_POLICIES}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SimParams":
        return cls(**obj)


@dataclass
class FlowField:
    """Per-pixel displacement ``(u, v)`` in pixels; ``u`` along columns, ``v`` along rows."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise InvalidInputError("u and v must be 2-D arrays of equal shape")
        if self.valid is None:
            self.valid = np.ones(self.u.shape, dtype=bool)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def uniform(cls, height: int, width: int, u: float, v: float) -> "FlowField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))


def _phases(surface: WaterSurface, x, y, t):
    for c in surface.components:
        k = c.wavenumber
        arg = k * (c.direction[0] * x + c.direction[1] * y) - k * c.speed * t + c.phase
        yield c, k, arg


def surface_height(surface: WaterSurface, x, y, t):
    """Height of the water surface above its mean level, in metres."""
    eta = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    for c, _, arg in _phases(surface, x, y, t):
        eta = eta + c.amplitude * np.sin(arg)
    return eta if eta.ndim else float(eta)


def surface_gradient(surface: WaterSurface, x, y, t):
    """Analytic ``(d eta/dx, d eta/dy)``."""
    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    gx = np.zeros(shape)
    gy = np.zeros(shape)
    for c, k, arg in _phases(surface, x, y, t):
        s = c.amplitude * k * np.cos(arg)
        gx = gx + s * c.direction[0]
        gy = gy + s * c.direction[1]
    return gx, gy


def surface_normal(surface: WaterSurface, x, y, t) -> np.ndarray:
    """Unit upward normal, shape ``broadcast(x, y).shape + (3,)``."""
    gx, gy = surface_gradient(surface, x, y, t)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def refract(incident, normal, n1: float, n2: float) -> np.ndarray:
    """Vector Snell's law.

    ``incident`` travels into the surface (``incident . normal < 0``). Accepts
    single 3-vectors or stacks of them along the leading axes.

    Raises:
        TotalInternalReflectionError: if no transmitted ray exists.
    """
    i = np.asarray(incident, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    r = n1 / n2
    cos_i = -np.sum(i * n, axis=-1, keepdims=True)
    sin2_t = r * r * (1.0 - cos_i * cos_i)
    if np.any(sin2_t > 1.0):
        raise TotalInternalReflectionError(
            f"total internal reflection for n1={n1}, n2={n2}")
    cos_t = np.sqrt(1.0 - sin2_t)
    return r * i + (r * cos_i - cos_t) * n


def pixel_centres(height: int, width: int, pixel_pitch: float):
    """World ``(x, y)`` of pixel centres; ``x`` follows columns, ``y`` rows."""
    x = (np.arange(width) + 0.5) * pixel_pitch
    y = (np.arange(height) + 0.5) * pixel_pitch
    return np.meshgrid(x, y)


def displacement_map(surface: WaterSurface, t: float, params: SimParams,
                     height: int, width: int) -> FlowField:
    xs, ys = pixel_centres(height, width, params.pixel_pitch)
    eta = surface_height(surface, xs, ys, t)
    normal = surface_normal(surface, xs, ys, t)
    down = np.broadcast_to(np.array([0.0, 0.0, -1.0]), normal.shape)
    ray = refract(down, normal, params.n_air, params.n_water)
    # vertical drop from the surface crossing to the bottom plane
    travel = (params.depth + eta) / -ray[..., 2]
    u = ray[..., 0] * travel / params.pixel_pitch
    v = ray[..., 1] * travel / params.pixel_pitch
    if params.border_policy == "mark-invalid":
        rows = np.arange(height)[:, None] + v
        cols = np.arange(width)[None, :] + u
        valid = (rows >= 0) & (rows <= height - 1) & (cols >= 0) & (cols <= width - 1)
    else:
        valid = np.ones((height, width), dtype=bool)
    return FlowField(u, v, valid)


def paraxial_displacement(surface: WaterSurface, t: float, params: SimParams,
                          height: int, width: int) -> FlowField:
    """Small-slope approximation ``depth (1 - n1/n2) grad(eta) / pitch``."""
    xs, ys = pixel_centres(height, width, params.pixel_pitch)
    gx, gy = surface_gradient(surface, xs, ys, t)
    scale = params.depth * (1.0 - params.n_air / params.n_water) / params.pixel_pitch
    return FlowField(scale * gx, scale * gy)


def apply_displacement(target: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward-warp ``target`` so that output(p) = target(p + w(p)).

    Pixels flagged invalid in ``flow`` are rendered black.
    """
    target = check_image(target)
    h, w = target.shape[:2]
    if flow.u.shape != (h, w):
        raise InvalidInputError(f"flow shape {flow.u.shape} does not match image {(h, w)}")
    rows = np.arange(h, dtype=np.float64)[:, None] + flow.v
    cols = np.arange(w, dtype=np.float64)[None, :] + flow.u
    out = sample_bilinear(target, rows, cols)
    if not flow.valid.all():
        out[~flow.valid] = 0.0
    return np.clip(out, 0.0, 1.0)


def render_frame(target: np.ndarray, surface: WaterSurface, t: float, params: SimParams) -> np.ndarray:
    target = check_image(target)
    h, w = target.shape[:2]
    return apply_displacement(target, displacement_map(surface, t, params, h, w))


def frame_times(fps: float, duration: float) -> np.ndarray:
    if not fps > 0 or not duration > 0:
        raise InvalidInputError("fps and duration must be positive")
    count = int(math.floor(duration * fps + 1e-9))
    return np.array([k / fps for k in range(count)])


def simulate_video(target: np.ndarray, surface: WaterSurface, fps: float, duration: float,
                   params: SimParams) -> list[np.ndarray]:
    return [render_frame(target, surface, t, params) for t in frame_times(fps, duration)]


@dataclass(frozen=True)
class WaveRanges:
    """Seeded sampling ranges for random surfaces (a calibration choice)."""

    n_components: tuple[int, int] = (2, 4)
    wavelength: tuple[float, float] = (0.05, 0.15)
    slope: tuple[float, float] = (0.01, 0.025)
    speed: tuple[float, float] = (0.1, 0.3)

    def to_json(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "WaveRanges":
        return cls(**{k: tuple(v) for k, v in obj.items()})


def random_surface(rng: np.random.Generator, ranges: WaveRanges = WaveRanges()) -> WaterSurface:
    """Draw a superposition of traveling sinusoids.

    Each component's steepness ``A k`` is drawn from ``ranges.slope`` so the
    displacement scale is controlled independently of wavelength.
    """
    lo, hi = ranges.n_components
    count = int(rng.integers(lo, hi + 1))
    comps = []
    for _ in range(count):
        wavelength = float(rng.uniform(*ranges.wavelength))
        slope = float(rng.uniform(*ranges.slope))
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        comps.append(WaveComponent(
            amplitude=slope * wavelength / (2.0 * math.pi),
            wavelength=wavelength,
            direction=(math.cos(theta), math.sin(theta)),
            phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            speed=float(rng.uniform(*ranges.speed)),
        ))
    return WaterSurface(tuple(comps))
