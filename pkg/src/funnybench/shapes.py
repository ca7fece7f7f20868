"""2D shape primitives and the bird-to-image similarity transform.

Shapes are described in bird-local coordinates (x right, y up, origin at the
bird center, geometry within roughly [-0.9, 0.9]^2).  Rasterization works by
inverse-mapping pixel centers into local coordinates and running vectorized
containment tests, so there is no anti-aliasing and results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices counter-clockwise in local coordinates."""

    points: tuple[tuple[float, float], ...]

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        # Even-odd rule ray cast, vectorized over the query points.
        inside = np.zeros(px.shape, dtype=bool)
        pts = self.points
        j = len(pts) - 1
        for i in range(len(pts)):
            xi, yi = pts[i]
            xj, yj = pts[j]
            cond = (yi > py) != (yj > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = (xj - xi) * (py - yi) / (yj - yi) + xi
            inside ^= cond & (px < xcross)
            j = i
        return inside

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Ellipse:
    """Axis-rotated ellipse: center, semi-axes, rotation in degrees."""

    cx: float
    cy: float
    rx: float
    ry: float
    rot_deg: float = 0.0

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        t = math.radians(self.rot_deg)
        c, s = math.cos(t), math.sin(t)
        dx = px - self.cx
        dy = py - self.cy
        u = (dx * c + dy * s) / self.rx
        v = (-dx * s + dy * c) / self.ry
        return u * u + v * v <= 1.0

    def bounds(self) -> tuple[float, float, float, float]:
        r = max(self.rx, self.ry)
        return self.cx - r, self.cy - r, self.cx + r, self.cy + r


Shape = Polygon | Ellipse


@dataclass(frozen=True)
class ViewTransform:
    """Similarity transform from bird-local coordinates to image pixels.

    Image coordinates are (col, row) with row increasing downward; local y
    points up, hence the sign flip.  `flip` mirrors the bird horizontally.
    """

    width: int
    height: int
    flip: bool
    rotation_deg: float
    scale: float
    offset: tuple[float, float]
    base_fraction: float = 0.42

    @property
    def pixels_per_unit(self) -> float:
        return self.scale * self.base_fraction * min(self.width, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (
            self.width / 2.0 + self.offset[0] * self.width,
            self.height / 2.0 + self.offset[1] * self.height,
        )

    def local_to_image(self, pts: np.ndarray) -> np.ndarray:
        """Map (N,2) local points to (N,2) image (col,row) coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        x = np.where(self.flip, -pts[:, 0], pts[:, 0])
        y = -pts[:, 1]
        k = self.pixels_per_unit
        t = math.radians(self.rotation_deg)
        c, s = math.cos(t), math.sin(t)
        u = k * (c * x - s * y)
        v = k * (s * x + c * y)
        cx, cy = self.center
        return np.stack([u + cx, v + cy], axis=1)

    def image_to_local(self, cols: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse map image (col,row) arrays to local (x, y)."""
        cx, cy = self.center
        u = np.asarray(cols, dtype=np.float64) - cx
        v = np.asarray(rows, dtype=np.float64) - cy
        t = math.radians(self.rotation_deg)
        c, s = math.cos(t), math.sin(t)
        k = self.pixels_per_unit
        x = (c * u + s * v) / k
        y = (-s * u + c * v) / k
        if self.flip:
            x = -x
        return x, -y

    def image_bbox(self, local_bounds: tuple[float, float, float, float]) -> tuple[int, int, int, int]:
        """Conservative integer pixel bbox (c0, r0, c1, r1), clipped to the image."""
        x0, y0, x1, y1 = local_bounds
        corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
        img = self.local_to_image(corners)
        c0 = int(np.floor(img[:, 0].min())) - 1
        c1 = int(np.ceil(img[:, 0].max())) + 1
        r0 = int(np.floor(img[:, 1].min())) - 1
        r1 = int(np.ceil(img[:, 1].max())) + 1
        return (
            max(c0, 0),
            max(r0, 0),
            min(c1, self.width - 1),
            min(r1, self.height - 1),
        )


def rasterize_local(
    shapes: list[Shape], view: ViewTransform
) -> tuple[np.ndarray, tuple[int, int, int, int]] | None:
    """Rasterize the union of local-coordinate shapes through a view transform.

    Returns (mask over the sub-window, (c0, r0, c1, r1)) or None when the
    footprint misses the image entirely.
    """
    x0 = min(s.bounds()[0] for s in shapes)
    y0 = min(s.bounds()[1] for s in shapes)
    x1 = max(s.bounds()[2] for s in shapes)
    y1 = max(s.bounds()[3] for s in shapes)
    c0, r0, c1, r1 = view.image_bbox((x0, y0, x1, y1))
    if c0 > c1 or r0 > r1:
        return None
    cols = np.arange(c0, c1 + 1) + 0.5
    rows = np.arange(r0, r1 + 1) + 0.5
    cgrid, rgrid = np.meshgrid(cols, rows)
    lx, ly = view.image_to_local(cgrid, rgrid)
    mask = np.zeros(lx.shape, dtype=bool)
    for shape in shapes:
        mask |= shape.contains(lx, ly)
    return mask, (c0, r0, c1, r1)


def rasterize_image_space(
    shapes: list[Shape], width: int, height: int
) -> tuple[np.ndarray, tuple[int, int, int, int]] | None:
    """Rasterize shapes whose coordinates are already image pixels."""
    x0 = min(s.bounds()[0] for s in shapes)
    y0 = min(s.bounds()[1] for s in shapes)
    x1 = max(s.bounds()[2] for s in shapes)
    y1 = max(s.bounds()[3] for s in shapes)
    c0 = max(int(np.floor(x0)) - 1, 0)
    r0 = max(int(np.floor(y0)) - 1, 0)
    c1 = min(int(np.ceil(x1)) + 1, width - 1)
    r1 = min(int(np.ceil(y1)) + 1, height - 1)
    if c0 > c1 or r0 > r1:
        return None
    cols = np.arange(c0, c1 + 1) + 0.5
    rows = np.arange(r0, r1 + 1) + 0.5
    cgrid, rgrid = np.meshgrid(cols, rows)
    mask = np.zeros(cgrid.shape, dtype=bool)
    for shape in shapes:
        mask |= shape.contains(cgrid, rgrid)
    return mask, (c0, r0, c1, r1)
