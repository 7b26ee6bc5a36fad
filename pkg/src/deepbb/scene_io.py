"""Scenes, color adjustment and perturbation files.

Scene manifest (``format: "deepbb/1"``)::

    {
      "format": "deepbb/1",
      "scene_id": "straight20",
      "prefill_color": "#FFFF00",
      "notes": "...",
      "frames": [
        {"image": "frame_000.png",            # relative to the manifest
         "quad": [[x, y], [x, y], [x, y], [x, y]],   # TL, TR, BR, BL in pixels
         "clipped": false,                    # quad may leave the frame
         "adj": [r, g, b]}                    # optional, default 0
      ]
    }

Images are 8-bit RGB PNG or binary PPM (P6). Perturbations are stored as an
8-bit PNG plus a sidecar ``<name>.json`` carrying the gamut and metadata.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (FormatError, GeometryError, InsufficientDataError, PrintabilityError,
                     SceneIOError, ValidationError)
from .gamut import Gamut, hex_to_rgb, nps_texture, rgb_to_hex
from .geometry import Quad, SamplingMap, billboard_homography

MANIFEST_FORMAT = "deepbb/1"
PERTURBATION_FORMAT = "deepbb-perturbation/1"
MIN_ADJ_PIXELS = 16


@dataclass(frozen=True)
class ColorAdjustment:
    """Additive per-channel offset: observed = printed + adj."""

    r: float = 0.0
    g: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = float(getattr(self, name))
            if not -1.0 <= v <= 1.0:
                raise ValidationError(f"color adjustment {name}={v} outside [-1, 1]")
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, values) -> "ColorAdjustment":
        if isinstance(values, ColorAdjustment):
            return values
        r, g, b = (float(v) for v in values)
        return cls(r, g, b)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b])

    def tolist(self) -> list[float]:
        return [self.r, self.g, self.b]


@dataclass
class FrameRecord:
    image: np.ndarray  # (3, Hf, Wf), [0, 1]
    quad: Quad
    adj: ColorAdjustment = field(default_factory=ColorAdjustment)
    clipped: bool = False
    baseline_angle: float | None = None
    name: str = ""


@dataclass
class Scene:
    scene_id: str
    frames: list[FrameRecord]
    prefill_color: tuple[float, float, float] = (1.0, 1.0, 0.0)
    notes: str = ""
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_frames(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_hw(self) -> tuple[int, int]:
        return self.frames[0].image.shape[1:]

    def baselines(self) -> np.ndarray:
        if any(f.baseline_angle is None for f in self.frames):
            raise ValidationError(f"scene {self.scene_id!r} has no baseline angles; call with_baselines(model)")
        return np.array([f.baseline_angle for f in self.frames])

    def with_baselines(self, model) -> "Scene":
        from .models import predict

        frames = [replace(f, baseline_angle=predict(model, f.image)) for f in self.frames]
        return replace(self, frames=frames)

    def sampling_maps(self, billboard_hw) -> list[SamplingMap]:
        return [SamplingMap(billboard_homography(billboard_hw, f.quad), self.frame_hw, billboard_hw)
                for f in self.frames]


def validate_frames(frames) -> None:
    if not frames:
        raise ValidationError("a scene needs at least one frame")
    shape = frames[0].image.shape
    for i, f in enumerate(frames):
        if f.image.ndim != 3 or f.image.shape[0] != 3:
            raise ValidationError(f"frame {i}: image must be [3, H, W], got {f.image.shape}")
        if f.image.shape != shape:
            raise ValidationError(f"frame {i}: dimensions {f.image.shape[1:]} differ from frame 0 {shape[1:]}")
        hf, wf = shape[1:]
        if not f.clipped and not f.quad.within(wf, hf):
            raise ValidationError(f"frame {i}: quad leaves the {wf}x{hf} frame and is not flagged clipped")


def read_image(path) -> np.ndarray:
    """Load an 8-bit RGB image as float64 [3, H, W] in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise SceneIOError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from None
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    return to_uint8(image).astype(np.float64) / 255.0


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(to_uint8(image).transpose(1, 2, 0), mode="RGB").save(path, format=fmt)


def _parse_color(value) -> tuple[float, float, float]:
    if isinstance(value, str):
        return hex_to_rgb(value)
    r, g, b = (float(v) for v in value)
    return (r, g, b)


def load_scene(manifest_path, model=None) -> Scene:
    """Read a scene manifest; with ``model`` given, baseline angles are computed."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SceneIOError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc}") from None
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{manifest_path}: expected format {MANIFEST_FORMAT!r}, got {doc.get('format')!r}")
    entries = doc.get("frames") or []
    if not entries:
        raise ValidationError(f"{manifest_path}: manifest lists no frames")

    base = manifest_path.parent
    frames = []
    for i, entry in enumerate(entries):
        img_path = base / entry["image"]
        if not img_path.exists():
            raise SceneIOError(f"frame {i}: image not found: {img_path}")
        image = read_image(img_path)
        try:
            quad = Quad(entry["quad"])
        except GeometryError as exc:
            raise ValidationError(f"frame {i}: {exc}") from None
        adj = ColorAdjustment.of(entry.get("adj", (0.0, 0.0, 0.0)))
        frames.append(FrameRecord(image, quad, adj, bool(entry.get("clipped", False)), None, entry["image"]))

    try:
        validate_frames(frames)
    except ValidationError as exc:
        raise ValidationError(f"{manifest_path}: {exc}") from None
    scene = Scene(
        scene_id=str(doc.get("scene_id", manifest_path.parent.name)),
        frames=frames,
        prefill_color=_parse_color(doc.get("prefill_color", "#FFFF00")),
        notes=str(doc.get("notes", "")),
        source={"manifest": str(manifest_path)},
    )
    return scene.with_baselines(model) if model is not None else scene


def manifest_dict(scene: Scene, image_names) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "scene_id": scene.scene_id,
        "prefill_color": rgb_to_hex(scene.prefill_color),
        "notes": scene.notes,
        "frames": [
            {"image": name, "quad": f.quad.tolist(), "clipped": f.clipped, "adj": f.adj.tolist()}
            for f, name in zip(scene.frames, image_names)
        ],
    }


def save_scene(scene: Scene, directory, image_ext: str = ".png") -> Path:
    """Write frames and ``manifest.json`` into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(scene.frames):
        name = f"frame_{i:03d}{image_ext}"
        write_image(directory / name, f.image)
        names.append(name)
    path = directory / "manifest.json"
    write_json(path, manifest_dict(scene, names))
    return path


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def quad_pixels(frame: np.ndarray, quad: Quad) -> np.ndarray:
    """Colors of the frame pixels whose centers fall inside ``quad``; shape (n, 3)."""
    smap = SamplingMap(billboard_homography((1, 1), quad), frame.shape[1:], (1, 1))
    return frame.reshape(3, -1)[:, smap.inside].T


def estimate_adj(frame, quad: Quad, prefill_color) -> ColorAdjustment:
    """Median observed billboard color minus the color it was painted with."""
    frame = np.asarray(frame, dtype=np.float64)
    pixels = quad_pixels(frame, quad)
    if len(pixels) < MIN_ADJ_PIXELS:
        raise InsufficientDataError(f"quad covers {len(pixels)} pixels; need at least {MIN_ADJ_PIXELS}")
    offset = np.median(pixels, axis=0) - np.asarray(_parse_color(prefill_color))
    return ColorAdjustment.of(np.clip(offset, -1.0, 1.0))


@dataclass
class Perturbation:
    texture: np.ndarray  # (3, Hb, Wb)
    gamut: Gamut
    metadata: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int]:
        return self.texture.shape[1:]

    def nps(self) -> float:
        return nps_texture(self.texture, self.gamut)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_perturbation(p: Perturbation, path) -> None:
    path = Path(path)
    write_image(path.with_suffix(".png"), p.texture)
    hb, wb = p.dims
    write_json(sidecar_path(path), {
        "format": PERTURBATION_FORMAT,
        "image": path.with_suffix(".png").name,
        "height": hb,
        "width": wb,
        "gamut": {"name": p.gamut.name, "colors": p.gamut.to_hex()},
        "metadata": p.metadata,
    })


def load_perturbation(path) -> Perturbation:
    """Load a texture and its sidecar; raises PrintabilityError if any texel is off-gamut."""
    path = Path(path)
    side = sidecar_path(path)
    try:
        doc = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SceneIOError(f"perturbation sidecar not found: {side}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON: {exc}") from None
    if doc.get("format") != PERTURBATION_FORMAT:
        raise FormatError(f"{side}: expected format {PERTURBATION_FORMAT!r}")
    texture = read_image(side.parent / doc.get("image", path.with_suffix(".png").name))
    if texture.shape[1:] != (doc.get("height"), doc.get("width")):
        raise FormatError(f"{path}: image is {texture.shape[1:]}, sidecar says {(doc.get('height'), doc.get('width'))}")
    try:
        gamut = Gamut.from_hex(doc["gamut"]["colors"], name=doc["gamut"].get("name", "custom"))
    except (KeyError, TypeError, ValidationError) as exc:
        raise FormatError(f"{side}: bad gamut: {exc}") from None
    p = Perturbation(texture, gamut, doc.get("metadata", {}))
    score = p.nps()
    if score != 0.0:
        raise PrintabilityError(f"{path}: texture is not printable with gamut {gamut.name!r} (NPS={score:.6g})")
    return p
