"""Billboard projection: homographies, bilinear warping and its exact adjoint.

Coordinate conventions
----------------------
Frame pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)`` with its center at
``(c + 0.5, r + 0.5)``; points are written ``(x, y)``. Texel space is the
same for the billboard texture, so its corners are ``(0, 0)``, ``(Wb, 0)``,
``(Wb, Hb)`` and ``(0, Hb)``.

A frame pixel is covered by the billboard when its center maps (through
``H^-1``) into ``[0, Wb) x [0, Hb)``. Covered pixels take a bilinear sample
of the texture at that point, with edge texels clamped.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GeometryError

CORNER_ORDER = ("top-left", "top-right", "bottom-right", "bottom-left")


@dataclass(frozen=True)
class Quad:
    """Four (x, y) corners ordered TL, TR, BR, BL."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (4, 2):
            raise GeometryError(f"quad needs 4 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("quad has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        self.validate()

    def validate(self) -> None:
        p = self.points
        scale = max(1.0, float(np.ptp(p)))
        for i in range(4):
            a, b, c = p[i], p[(i + 1) % 4], p[(i + 2) % 4]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= 1e-9 * scale * scale:
                raise GeometryError(f"degenerate quad: corners {i}, {(i + 1) % 4}, {(i + 2) % 4} are collinear")
        if self.area() <= 0:
            raise GeometryError("quad corners must run TL, TR, BR, BL (non-positive area)")

    def area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @classmethod
    def rect(cls, width: float, height: float, x0: float = 0.0, y0: float = 0.0) -> "Quad":
        return cls([[x0, y0], [x0 + width, y0], [x0 + width, y0 + height], [x0, y0 + height]])

    def within(self, width: float, height: float) -> bool:
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all((x >= 0) & (x <= width) & (y >= 0) & (y <= height)))

    def tolist(self) -> list[list[float]]:
        return self.points.tolist()


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) < 1e-15:
            raise GeometryError("homography has H[2,2] == 0")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise GeometryError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @cached_property
    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        hom = np.c_[pts, np.ones(len(pts))] @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]


def _normalizer(pts: np.ndarray) -> np.ndarray:
    center = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - center, axis=1))
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0, -s * center[0]], [0, s, -s * center[1]], [0, 0, 1.0]])


def estimate_homography(src: Quad, dst: Quad) -> Homography:
    """Normalized DLT from four correspondences (maps src points to dst)."""
    a, b = src.points, dst.points
    Ta, Tb = _normalizer(a), _normalizer(b)
    an = (np.c_[a, np.ones(4)] @ Ta.T)[:, :2]
    bn = (np.c_[b, np.ones(4)] @ Tb.T)[:, :2]
    rows = []
    for (x, y), (u, v) in zip(an, bn):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    # 8x9 system: the null vector is the last right singular vector
    _, sv, vt = np.linalg.svd(np.asarray(rows))
    if sv[-1] < 1e-10 * sv[0]:
        raise GeometryError("corner correspondences do not determine a unique homography")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    if abs(H[2, 2]) < 1e-15:
        raise GeometryError("homography maps a corner to infinity")
    return Homography(H / H[2, 2])


def billboard_homography(dims: tuple[int, int], quad: Quad) -> Homography:
    """Homography from texel space of an (Hb, Wb) texture onto ``quad``."""
    hb, wb = dims
    return estimate_homography(Quad.rect(wb, hb), quad)


def _snap(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # sample points within roundoff of a texel center read that texel exactly
    r = np.round(a)
    return np.where(np.abs(a - r) < tol, r, a)


class SamplingMap:
    """Precomputed bilinear sampling of a texture into one frame.

    ``sample`` is linear in the texture and ``splat`` is its exact adjoint.
    """

    def __init__(self, H: Homography, frame_hw: tuple[int, int], billboard_hw: tuple[int, int]):
        hf, wf = frame_hw
        hb, wb = billboard_hw
        self.frame_hw = (int(hf), int(wf))
        self.billboard_hw = (int(hb), int(wb))
        ys, xs = np.mgrid[0:hf, 0:wf]
        centers = np.c_[xs.ravel() + 0.5, ys.ravel() + 0.5]
        hom = np.c_[centers, np.ones(len(centers))] @ H.inverse.matrix.T
        w = hom[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = hom[:, 0] / w
            v = hom[:, 1] / w
        inside = (w > 0) & (u >= 0) & (u < wb) & (v >= 0) & (v < hb)
        self.inside = np.flatnonzero(inside)
        mask = np.zeros(hf * wf, dtype=bool)
        mask[self.inside] = True
        self.mask = mask.reshape(hf, wf)

        # continuous texel index of the sample point
        fx = _snap(u[self.inside] - 0.5)
        fy = _snap(v[self.inside] - 0.5)
        x0 = np.floor(fx)
        y0 = np.floor(fy)
        ax = fx - x0
        ay = fy - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        xa = np.clip(x0, 0, wb - 1)
        xb = np.clip(x0 + 1, 0, wb - 1)
        ya = np.clip(y0, 0, hb - 1)
        yb = np.clip(y0 + 1, 0, hb - 1)
        self.index = np.stack([ya * wb + xa, ya * wb + xb, yb * wb + xa, yb * wb + xb])
        self.weight = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay])
        self.ax, self.ay = ax, ay

    @property
    def n_texels(self) -> int:
        return self.billboard_hw[0] * self.billboard_hw[1]

    def sample(self, texture: np.ndarray) -> np.ndarray:
        """Bilinear samples at covered pixels, shape (3, n_inside)."""
        flat = np.asarray(texture, dtype=np.float64).reshape(3, -1)
        t00, t01, t10, t11 = (flat[:, idx] for idx in self.index)
        # nested lerps: same linear map as the four weights, but exact on flat regions
        top = t00 + self.ax * (t01 - t00)
        bottom = t10 + self.ax * (t11 - t10)
        return top + self.ay * (bottom - top)

    def splat(self, values: np.ndarray) -> np.ndarray:
        """Adjoint of ``sample``: (3, n_inside) -> flat texel array (3, Hb*Wb)."""
        out = np.zeros((3, self.n_texels))
        for idx, w in zip(self.index, self.weight):
            for ch in range(3):
                out[ch] += np.bincount(idx, weights=values[ch] * w, minlength=self.n_texels)
        return out

    def linearized(self, texture: np.ndarray) -> np.ndarray:
        """Frame-shaped array: texture samples on covered pixels, zero elsewhere."""
        hf, wf = self.frame_hw
        out = np.zeros((3, hf * wf))
        out[:, self.inside] = self.sample(texture)
        return out.reshape(3, hf, wf)

    def observed(self, texture: np.ndarray, adj) -> np.ndarray:
        """Unclipped observed colors texture + adj at covered pixels."""
        return self.sample(texture) + np.asarray(adj, dtype=np.float64).reshape(3, 1)

    def warp(self, texture: np.ndarray, frame: np.ndarray, adj=(0.0, 0.0, 0.0)) -> np.ndarray:
        out = np.array(frame, dtype=np.float64, copy=True)
        flat = out.reshape(3, -1)
        flat[:, self.inside] = np.clip(self.observed(texture, adj), 0.0, 1.0)
        return out

    def pullback(self, frame_grad: np.ndarray, texture: np.ndarray | None = None, adj=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Frame gradient -> texel gradient (3, Hb, Wb).

        Only covered pixels contribute. When ``texture`` is given, pixels whose
        observed color ``texture + adj`` lies strictly outside [0, 1] are
        dropped: the clamp in ``warp`` holds them fixed under any small texel
        change. Pixels exactly on the boundary keep their gradient, so merging
        proposals from several frames sums like gradients; the step's own
        clip to [0, 1] then stops texels from leaving the range.
        """
        g = np.asarray(frame_grad, dtype=np.float64).reshape(3, -1)[:, self.inside]
        if texture is not None:
            obs = self.observed(texture, adj)
            g = np.where((obs > 1.0) | (obs < 0.0), 0.0, g)
        hb, wb = self.billboard_hw
        return self.splat(g).reshape(3, hb, wb)


def sampling_map(H: Homography, frame_hw, billboard_hw) -> SamplingMap:
    return SamplingMap(H, frame_hw, billboard_hw)


def warp_into_frame(texture, H: Homography, frame, adj=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Paste ``clip(texture + adj)`` into the region of ``frame`` covered by ``H``."""
    texture = np.asarray(texture, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    return SamplingMap(H, frame.shape[1:], texture.shape[1:]).warp(texture, frame, adj)


def warp_linearized(texture, H: Homography, frame_hw) -> np.ndarray:
    texture = np.asarray(texture, dtype=np.float64)
    return SamplingMap(H, frame_hw, texture.shape[1:]).linearized(texture)


def reverse_project(frame_grad, H: Homography, billboard_dims, adj=None, texture=None) -> np.ndarray:
    """Pull a frame-space gradient back onto billboard texels (adjoint of the warp).

    With ``texture`` and ``adj`` given, the clamp in ``warp_into_frame`` is
    respected (see ``SamplingMap.pullback``). Because the observed color is ``texture + adj``, the texel gradient equals
    the observed-color gradient; the color shift is accounted for by that
    saturation test rather than by rescaling.
    """
    frame_grad = np.asarray(frame_grad, dtype=np.float64)
    smap = SamplingMap(H, frame_grad.shape[1:], billboard_dims)
    if texture is None:
        return smap.pullback(frame_grad)
    return smap.pullback(frame_grad, texture, (0.0, 0.0, 0.0) if adj is None else adj)
