"""Printable color sets, non-printability score and gamut projection.

A pixel's NPS is the product of its Euclidean distances (normalized RGB) to
every printable color, so it is zero exactly on the gamut. A texture's NPS
is the sum over texels.

Palette files are UTF-8 with one ``#RRGGBB`` per line; text after a ``#``
that is not a color (e.g. ``# comment``) is ignored.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

_HEX = re.compile(r"^#([0-9a-fA-F]{6})$")

DEFAULT_PALETTE = (
    "#000000", "#FF0000", "#00FF00", "#0000FF",
    "#FFFF00", "#FF00FF", "#00FFFF", "#FFFFFF",
    "#404040", "#808080", "#C0C0C0",
)


def hex_to_rgb(text: str) -> tuple[float, float, float]:
    m = _HEX.match(text.strip())
    if not m:
        raise ValidationError(f"not a #RRGGBB color: {text!r}")
    v = m.group(1)
    return tuple(int(v[i:i + 2], 16) / 255.0 for i in (0, 2, 4))


def rgb_to_hex(rgb) -> str:
    r, g, b = (int(round(float(c) * 255.0)) for c in rgb)
    return f"#{r:02X}{g:02X}{b:02X}"


@dataclass(frozen=True)
class Gamut:
    colors: np.ndarray  # (n, 3), rows in [0,1]
    name: str = "custom"

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) == 0:
            raise ValidationError("gamut must contain at least one color")
        if np.any(colors < 0) or np.any(colors > 1):
            raise ValidationError("gamut colors must lie in [0,1]^3")
        if len(np.unique(colors, axis=0)) != len(colors):
            raise ValidationError("gamut contains duplicate colors")
        colors.setflags(write=False)
        object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return len(self.colors)

    @classmethod
    def from_hex(cls, values, name: str = "custom") -> "Gamut":
        return cls(np.array([hex_to_rgb(v) for v in values]), name)

    def to_hex(self) -> list[str]:
        return [rgb_to_hex(c) for c in self.colors]


def default_gamut() -> Gamut:
    """RGB cube corners plus a three-step gray ramp."""
    return Gamut.from_hex(DEFAULT_PALETTE, name="default11")


def corner_gamut() -> Gamut:
    return Gamut.from_hex(DEFAULT_PALETTE[:8], name="corners8")


def load_palette(path) -> Gamut:
    path = Path(path)
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        token = line.split()[0]
        if _HEX.match(token):
            values.append(token)
        elif line.startswith("#"):
            continue
        else:
            raise FormatError(f"{path}:{lineno}: expected #RRGGBB, got {line!r}")
    try:
        return Gamut.from_hex(values, name=path.stem)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _distances(pixels: np.ndarray, gamut: Gamut) -> np.ndarray:
    # (n, |P|) Euclidean distances
    diff = pixels[:, None, :] - gamut.colors[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def nps_pixel(rgb, gamut: Gamut) -> float:
    p = np.asarray(rgb, dtype=np.float64).reshape(1, 3)
    return float(np.prod(_distances(p, gamut)[0]))


def nps_texture(texture: np.ndarray, gamut: Gamut) -> float:
    pixels = np.asarray(texture, dtype=np.float64).reshape(3, -1).T
    return float(np.sum(np.prod(_distances(pixels, gamut), axis=1)))


def project_to_gamut(texture: np.ndarray, gamut: Gamut) -> np.ndarray:
    """Replace each texel by its nearest gamut color (ties -> lowest index)."""
    texture = np.asarray(texture, dtype=np.float64)
    pixels = texture.reshape(3, -1).T
    nearest = np.argmin(_distances(pixels, gamut), axis=1)
    return gamut.colors[nearest].T.reshape(texture.shape).copy()
