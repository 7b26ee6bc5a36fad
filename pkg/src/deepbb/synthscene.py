"""Deterministic drive-by renderer for desk-scale experiments.

World frame: x to the right, y up, z along the road. The camera sits at
height ``CAM_HEIGHT`` above the ground plane looking down +z; the road
center follows ``x = -curvature * z**2 / 2`` so positive curvature bends
left. A billboard is an upright world rectangle facing the camera.

Lighting is a global additive offset applied to the whole frame, so the
billboard's color adjustment equals that offset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RenderError, ValidationError
from .geometry import Quad, SamplingMap, billboard_homography
from .scene_io import ColorAdjustment, FrameRecord, Scene, quantize

CAM_HEIGHT = 1.5
WHEELBASE = 2.7
STEERING_RATIO = 10.0
MAX_CURVATURE = 0.012

SKY = (0.55, 0.70, 0.90)
GRASS = (0.25, 0.45, 0.20)
ROAD = (0.35, 0.35, 0.37)
LINE = (0.95, 0.95, 0.95)


@dataclass(frozen=True)
class Camera:
    focal: float = 32.0
    horizon: float = 0.5  # principal point row as a fraction of frame height

    def principal_point(self, dims) -> tuple[float, float]:
        hf, wf = dims
        return wf / 2.0, hf * self.horizon

    def project(self, points, dims, lateral_offset: float = 0.0) -> np.ndarray:
        """World (x, y, z) -> pixel (x, y); z is measured from the camera."""
        cx, cy = self.principal_point(dims)
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if np.any(p[:, 2] <= 0):
            raise RenderError("point behind the camera")
        u = cx + self.focal * (p[:, 0] - lateral_offset) / p[:, 2]
        v = cy - self.focal * (p[:, 1] - CAM_HEIGHT) / p[:, 2]
        return np.c_[u, v]


@dataclass(frozen=True)
class Billboard:
    """Upright world rectangle; 6:4 aspect by default."""

    width: float = 7.2
    height: float = 4.8
    left: float = 1.9  # x of the left edge
    bottom: float = 0.5

    def corners(self, distance: float) -> np.ndarray:
        x0, x1 = self.left, self.left + self.width
        y0, y1 = self.bottom, self.bottom + self.height
        return np.array([[x0, y1, distance], [x1, y1, distance], [x1, y0, distance], [x0, y0, distance]])


@dataclass(frozen=True)
class Pose:
    distance: float  # camera to billboard plane, meters
    lateral_offset: float = 0.0
    speed: float = 8.9408  # 20 mph
    interval: float = 0.1


@dataclass
class DrivePath:
    poses: list[Pose]
    lighting: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.poses:
            raise ValidationError("a drive path needs at least one pose")
        if not self.lighting:
            self.lighting = [0.0] * len(self.poses)
        if len(self.lighting) != len(self.poses):
            raise ValidationError("lighting needs one entry per pose")
        d = [p.distance for p in self.poses]
        if any(b >= a for a, b in zip(d, d[1:])):
            raise ValidationError("distances must strictly decrease along a drive-by")
        if any(x <= 0 for x in d):
            raise ValidationError("billboard must stay in front of the camera")

    @classmethod
    def straight(cls, n_frames: int, start_distance: float, speed: float = 8.9408, interval: float = 0.1,
                 lateral_offset: float = 0.0, lighting: float = 0.0) -> "DrivePath":
        step = speed * interval
        poses = [Pose(start_distance - k * step, lateral_offset, speed, interval) for k in range(n_frames)]
        return cls(poses, [lighting] * n_frames)

    @classmethod
    def from_dict(cls, d: dict) -> "DrivePath":
        if "poses" in d:
            poses = [Pose(**p) for p in d["poses"]]
            return cls(poses, list(d.get("lighting", [])))
        return cls.straight(int(d["n_frames"]), float(d["start_distance"]), float(d.get("speed", 8.9408)),
                            float(d.get("interval", 0.1)), float(d.get("lateral_offset", 0.0)),
                            float(d.get("lighting", 0.0)))


def _background(dims, camera: Camera, lateral_offset: float, curvature: float, road_half_width: float,
                supersample: int = 3) -> np.ndarray:
    hf, wf = dims
    cx, cy = camera.principal_point(dims)
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    ys = (np.arange(hf)[:, None] + offs[None, :]).ravel()
    xs = (np.arange(wf)[:, None] + offs[None, :]).ravel()
    V, U = np.meshgrid(ys, xs, indexing="ij")
    img = np.empty((3,) + V.shape)
    for ch in range(3):
        img[ch] = SKY[ch]
    below = V > cy + 1e-9
    z = np.where(below, camera.focal * CAM_HEIGHT / np.where(below, V - cy, 1.0), 0.0)
    x = lateral_offset + (U - cx) * z / camera.focal
    center = -curvature * z ** 2 / 2.0
    dx = np.abs(x - center)
    line_w = 0.15
    on_road = below & (dx < road_half_width + line_w)
    on_line = on_road & ((np.abs(dx - road_half_width) < line_w / 2) | (dx < line_w / 2) & (np.floor(z / 3.0) % 2 == 0))
    for ch in range(3):
        img[ch][below] = GRASS[ch]
        img[ch][on_road] = ROAD[ch]
        img[ch][on_line] = LINE[ch]
    return img.reshape(3, hf, s, wf, s).mean(axis=(2, 4))


def render_frame(dims, camera: Camera = Camera(), lateral_offset: float = 0.0, curvature: float = 0.0,
                 lighting: float = 0.0, road_half_width: float = 1.8) -> np.ndarray:
    """Road-only frame, [3, H, W] in [0, 1]."""
    img = _background(dims, camera, lateral_offset, curvature, road_half_width)
    return np.clip(img + lighting, 0.0, 1.0)


def unicolor_texture(color, dims=(16, 24)) -> np.ndarray:
    return np.broadcast_to(np.asarray(color, dtype=np.float64)[:, None, None], (3, *dims)).copy()


def calibration_texture(prefill, dims=(16, 24), mark=None, mark_frac: float = 0.15) -> np.ndarray:
    """Unicolor board with contrasting squares painted in its four corners."""
    tex = unicolor_texture(prefill, dims)
    if mark is None:
        mark = tuple(1.0 - c for c in prefill)
    hb, wb = dims
    mh, mw = max(1, int(hb * mark_frac)), max(1, int(wb * mark_frac))
    for rs in (slice(0, mh), slice(hb - mh, hb)):
        for cs in (slice(0, mw), slice(wb - mw, wb)):
            tex[:, rs, cs] = np.asarray(mark, dtype=np.float64)[:, None, None]
    return tex


def render_scene(path: DrivePath, billboard_texture, dims=(32, 64), seed: int = 0, *,
                 camera: Camera = Camera(), billboard: Billboard = Billboard(), curvature: float = 0.0,
                 noise: float = 0.0, quantized: bool = True, min_area: float = 400.0,
                 prefill_color=(1.0, 1.0, 0.0), scene_id: str = "synthetic") -> Scene:
    """Render a billboard drive-by with exact corner quads and per-frame ADJ."""
    texture = np.asarray(billboard_texture, dtype=np.float64)
    if texture.ndim != 3 or texture.shape[0] != 3:
        raise RenderError(f"billboard texture must be [3, Hb, Wb], got {texture.shape}")
    dims = tuple(int(d) for d in dims)
    hf, wf = dims
    rng = np.random.default_rng(seed)
    frames = []
    for k, (pose, light) in enumerate(zip(path.poses, path.lighting)):
        pts = camera.project(billboard.corners(pose.distance), dims, pose.lateral_offset)
        quad = Quad(pts)
        inside = quad.within(wf, hf)
        if k == 0:
            if not inside:
                raise RenderError("billboard must be fully visible in the first frame")
            if quad.area() <= min_area:
                raise RenderError(f"first-frame billboard area {quad.area():.1f} px <= {min_area} px")
        smap = SamplingMap(billboard_homography(texture.shape[1:], quad), dims, texture.shape[1:])
        if len(smap.inside) == 0:
            raise RenderError(f"frame {k}: billboard lies fully outside the frame")
        bg = render_frame(dims, camera, pose.lateral_offset, curvature, light)
        img = smap.warp(texture, bg, (light, light, light))
        if noise > 0:
            img = np.clip(img + rng.normal(0.0, noise, img.shape), 0.0, 1.0)
        if quantized:
            img = quantize(img)
        frames.append(FrameRecord(img, quad, ColorAdjustment(light, light, light), clipped=not inside,
                                  name=f"frame_{k:03d}"))
    return Scene(scene_id, frames, tuple(float(c) for c in prefill_color),
                 notes="synthetic drive-by", source={"renderer": "deepbb.synthscene", "seed": seed})


def curvature_to_angle(curvature: float) -> float:
    """Steering-wheel angle (degrees, positive = left) that tracks a road of given curvature."""
    return STEERING_RATIO * math.degrees(math.atan(WHEELBASE * curvature))


def make_steering_dataset(n_scenes: int, seed: int = 0, dims=(32, 64), straight_fraction: float = 0.25,
                          camera: Camera = Camera()):
    """Billboard-free road frames labelled with the curvature-derived steering angle."""
    if n_scenes < 1:
        raise ValidationError(f"n_scenes must be >= 1, got {n_scenes}")
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n_scenes):
        if rng.random() < straight_fraction:
            kappa = 0.0
        else:
            kappa = float(rng.uniform(-MAX_CURVATURE, MAX_CURVATURE))
        light = float(rng.uniform(-0.08, 0.08))
        half_width = float(rng.uniform(1.6, 2.0))
        frame = quantize(render_frame(dims, camera, 0.0, kappa, light, half_width))
        data.append((frame, curvature_to_angle(kappa)))
    return data
