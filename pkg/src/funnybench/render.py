"""Deterministic toon-style rasterizer producing images and entity label maps.

Rendering has no anti-aliasing: each pixel belongs to exactly one entity, and
the label map is exactly consistent with the painted colors.  Colors are
quantized to the 8-bit grid before being returned, so a PNG round trip (and a
float32 round trip over the wire protocol) is lossless.

Cast shadows are not modeled; shading is a per-entity flat fill with darkened
horizontal bands plus an inner outline, all scaled by the scene illumination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .catalog import (
    BG_OBJECT_LABEL_BASE,
    BODY_COLOR,
    BODY_LABEL,
    BODY_SHAPES,
    CANVAS_COLOR,
    MAX_BG_OBJECT_ID,
    PART_COLORS,
    PART_SHAPES,
    PART_Z_ORDER,
    PartSlot,
)
from .scene import BackgroundObject, ClassSpace, SceneSpec
from .shapes import Ellipse, Polygon, Shape, ViewTransform, rasterize_image_space, rasterize_local
from .validation import check_odd_kernel

OUTLINE_FACTOR = 0.55
BAND_STEP = 0.12  # brightness drop per shading band, top to bottom


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 64
    canvas_color: tuple[float, float, float] = CANVAS_COLOR
    shading_bands: int = 3
    outline_width: int = 1

    def __post_init__(self):
        if self.resolution < 32:
            raise ValueError(f"resolution must be >= 32, got {self.resolution}")
        if self.shading_bands < 1:
            raise ValueError(f"shading_bands must be >= 1, got {self.shading_bands}")
        if self.outline_width < 0:
            raise ValueError("outline_width must be >= 0")


def bg_object_shapes(obj: BackgroundObject, resolution: int) -> list[Shape]:
    """Image-space shapes for one background object."""
    cx = obj.position[0] * resolution
    cy = obj.position[1] * resolution
    r = obj.scale * resolution / 2.0
    if obj.kind == "disc":
        return [Ellipse(cx, cy, r, r)]
    if obj.kind == "triangle":
        return [Polygon(((cx, cy - r), (cx + 0.866 * r, cy + 0.5 * r), (cx - 0.866 * r, cy + 0.5 * r)))]
    if obj.kind == "quad":
        return [Polygon(((cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)))]
    raise ValueError(f"unknown background object kind {obj.kind!r}")


def _inner_outline(mask: np.ndarray, width: int) -> np.ndarray:
    """Pixels of `mask` within `width` of its boundary (inner ring)."""
    if width <= 0:
        return np.zeros_like(mask)
    core = mask.copy()
    for _ in range(width):
        eroded = core.copy()
        eroded[1:, :] &= core[:-1, :]
        eroded[:-1, :] &= core[1:, :]
        eroded[:, 1:] &= core[:, :-1]
        eroded[:, :-1] &= core[:, 1:]
        # image border pixels count as boundary
        eroded[0, :] = False
        eroded[-1, :] = False
        eroded[:, 0] = False
        eroded[:, -1] = False
        core = eroded
    return mask & ~core


def _paint(
    color: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    window: tuple[int, int, int, int],
    base_rgb,
    label: int,
    illumination: float,
    bands: int,
    outline_width: int,
) -> None:
    """Paint one entity into the color/label buffers (topmost wins by call order)."""
    c0, r0, c1, r1 = window
    if not mask.any():
        return
    rows_any = mask.any(axis=1)
    rmin = int(np.argmax(rows_any))
    rmax = int(len(rows_any) - 1 - np.argmax(rows_any[::-1]))
    height = max(rmax - rmin, 0) + 1
    rel = (np.arange(mask.shape[0]) - rmin) / height
    band_idx = np.clip((rel * bands).astype(int), 0, bands - 1)
    factor = 1.0 - BAND_STEP * band_idx  # per-row brightness
    shaded = factor[:, None, None] * np.asarray(base_rgb, dtype=np.float64)[None, None, :]
    shaded = shaded * illumination
    outline = _inner_outline(mask, outline_width)
    sub = color[r0 : r1 + 1, c0 : c1 + 1]
    sub[mask] = shaded[mask.nonzero()[0], 0, :][:, :]
    if outline.any():
        outline_rgb = np.asarray(base_rgb, dtype=np.float64) * OUTLINE_FACTOR * illumination
        sub[outline] = outline_rgb
    labels[r0 : r1 + 1, c0 : c1 + 1][mask] = label


def render_scene(
    scene: SceneSpec, space: ClassSpace, cfg: RenderConfig = RenderConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Render a scene to (image, label map).

    Returns a float32 HxWx3 image with values on the 8-bit grid in [0, 1], and
    a uint8 HxW label map (0 background, 1..5 part slots, 6 body, 100+k
    background object k).  Fixed z-order: background objects < body < tail <
    wing < foot < beak < eye.
    """
    res = cfg.resolution
    illum = scene.illumination
    color = np.empty((res, res, 3), dtype=np.float64)
    color[:] = np.asarray(cfg.canvas_color, dtype=np.float64) * illum
    labels = np.zeros((res, res), dtype=np.uint8)

    for obj in scene.background_objects:
        if obj.object_id > MAX_BG_OBJECT_ID:
            raise ValueError(f"background object id {obj.object_id} exceeds {MAX_BG_OBJECT_ID}")
        hit = rasterize_image_space(bg_object_shapes(obj, res), res, res)
        if hit is None:
            continue
        mask, window = hit
        _paint(
            color, labels, mask, window, obj.color,
            BG_OBJECT_LABEL_BASE + obj.object_id, illum, cfg.shading_bands, cfg.outline_width,
        )

    view = ViewTransform(
        width=res, height=res,
        flip=scene.viewpoint.flip, rotation_deg=scene.viewpoint.rotation_deg,
        scale=scene.viewpoint.scale, offset=scene.viewpoint.offset,
    )
    hit = rasterize_local(BODY_SHAPES, view)
    if hit is not None:
        _paint(color, labels, hit[0], hit[1], BODY_COLOR, BODY_LABEL, illum,
               cfg.shading_bands, cfg.outline_width)

    assignment = space[scene.class_id].assignment
    for slot in PART_Z_ORDER:
        if slot not in scene.present_parts:
            continue
        variant = assignment[slot]
        hit = rasterize_local(PART_SHAPES[slot][variant], view)
        if hit is None:
            continue
        _paint(
            color, labels, hit[0], hit[1], PART_COLORS[slot][variant],
            int(slot), illum, cfg.shading_bands, cfg.outline_width,
        )

    quantized = np.round(np.clip(color, 0.0, 1.0) * 255.0).astype(np.uint8)
    image = quantized.astype(np.float32) / np.float32(255.0)
    return image, labels


def part_mask(labels: np.ndarray, entity_label: int) -> np.ndarray:
    """Binary mask of pixels carrying `entity_label`."""
    return labels == entity_label


def dilate_mask(mask: np.ndarray, kernel_px: int = 5) -> np.ndarray:
    """Morphological dilation with a square structuring element (odd size)."""
    k = check_odd_kernel(kernel_px)
    r = k // 2
    mask = np.asarray(mask, dtype=bool)
    if r == 0:
        return mask.copy()
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy in range(-r, r + 1):
        ys = slice(max(0, dy), min(h, h + dy))
        yd = slice(max(0, -dy), min(h, h - dy))
        for dx in range(-r, r + 1):
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            out[yd, xd] |= mask[ys, xs]
    return out


def image_to_png_bytes(image: np.ndarray) -> bytes:
    import io

    arr = np.round(np.asarray(image, dtype=np.float64) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def labels_to_png_bytes(labels: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_image_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / np.float32(255.0)


def load_labels_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()
