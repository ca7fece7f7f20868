"""Part variant inventory: geometry and colors for every bird part variant.

Geometry lives in bird-local coordinates (see shapes.py).  Colors were chosen
on saturation rings with hues spaced by equal chromaticity arc length, so that
every variant color is separated from every other surface color by at least
0.06 in (r, g, b)/sum chromaticity space.  Chromaticity is invariant under the
scalar illumination and shading factors applied at render time, which keeps
variants machine-identifiable in rendered pixels (used by the white-box
verification models) and visually distinct.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from .shapes import Ellipse, Polygon, Shape


class PartSlot(IntEnum):
    """The five removable bird parts. Label 0 is background, 6 the body."""

    BEAK = 1
    WING = 2
    FOOT = 3
    EYE = 4
    TAIL = 5


BACKGROUND_LABEL = 0
BODY_LABEL = 6
BG_OBJECT_LABEL_BASE = 100  # background object k gets label 100 + k
MAX_BG_OBJECT_ID = 99

VARIANT_COUNTS = {
    PartSlot.BEAK: 4,
    PartSlot.EYE: 3,
    PartSlot.FOOT: 4,
    PartSlot.TAIL: 9,
    PartSlot.WING: 6,
}

# Saturation rings (outer -> inner), hues at equal chroma arc length.
_RING_A = [
    (0.74, 0, 0),
    (0.74, 0.1869, 0),
    (0.74, 0.4983, 0),
    (0.4859, 0.74, 0),
    (0.1795, 0.74, 0),
    (0, 0.74, 0.0068),
    (0, 0.74, 0.3071),
    (0, 0.5414, 0.74),
    (0, 0.1184, 0.74),
    (0.127, 0, 0.74),
    (0.5606, 0, 0.74),
    (0.74, 0, 0.2942),
]
_RING_M = [
    (0.56, 0.112, 0.112),
    (0.56, 0.3345, 0.112),
    (0.4245, 0.56, 0.112),
    (0.1654, 0.56, 0.112),
    (0.112, 0.56, 0.3603),
    (0.112, 0.2875, 0.56),
    (0.2001, 0.112, 0.56),
    (0.56, 0.112, 0.5133),
]
_RING_B = [
    (0.4, 0.2669, 0.192),
    (0.3391, 0.4, 0.192),
    (0.192, 0.4, 0.213),
    (0.192, 0.3203, 0.4),
    (0.2414, 0.192, 0.4),
    (0.4, 0.192, 0.3198),
]

PART_COLORS: dict[PartSlot, list[tuple[float, float, float]]] = {
    PartSlot.BEAK: [_RING_A[0], _RING_A[2], _RING_M[1], _RING_B[0]],
    PartSlot.EYE: [_RING_A[9], _RING_M[6], _RING_B[4]],
    PartSlot.FOOT: [_RING_A[1], _RING_A[10], _RING_M[2], _RING_B[5]],
    PartSlot.TAIL: [
        _RING_A[3],
        _RING_A[5],
        _RING_A[7],
        _RING_A[11],
        _RING_M[0],
        _RING_M[3],
        _RING_M[5],
        _RING_B[1],
        _RING_B[3],
    ],
    PartSlot.WING: [_RING_A[4], _RING_A[6], _RING_A[8], _RING_M[4], _RING_M[7], _RING_B[2]],
}

BODY_COLOR = (0.62, 0.58, 0.52)
CANVAS_COLOR = (0.70, 0.73, 0.76)

# Innermost ring: background object palette (never confusable with parts).
BG_PALETTE = [
    (0.62, 0.5473, 0.5146),
    (0.62, 0.6166, 0.5146),
    (0.5534, 0.62, 0.5146),
    (0.5146, 0.62, 0.5576),
    (0.5146, 0.5871, 0.62),
    (0.5146, 0.5177, 0.62),
    (0.5805, 0.5146, 0.62),
    (0.62, 0.5146, 0.5677),
]

BODY_SHAPES: list[Shape] = [
    Ellipse(-0.05, -0.02, 0.40, 0.28),  # torso
    Ellipse(0.33, 0.30, 0.185, 0.185),  # head
]


def _leg_pair(builder) -> list[Shape]:
    shapes: list[Shape] = []
    for x in (-0.17, 0.05):
        shapes.extend(builder(x))
    return shapes


def _leg(x: float, half_w: float = 0.018, bottom: float = -0.50) -> Polygon:
    return Polygon(((x - half_w, -0.26), (x + half_w, -0.26), (x + half_w, bottom), (x - half_w, bottom)))


PART_SHAPES: dict[PartSlot, list[list[Shape]]] = {
    PartSlot.BEAK: [
        [Polygon(((0.50, 0.36), (0.50, 0.24), (0.80, 0.30)))],
        [Polygon(((0.50, 0.38), (0.50, 0.18), (0.67, 0.28)))],
        [Polygon(((0.50, 0.37), (0.68, 0.35), (0.73, 0.22), (0.62, 0.28), (0.50, 0.25)))],
        [
            Polygon(((0.50, 0.37), (0.78, 0.42), (0.50, 0.30))),
            Polygon(((0.50, 0.28), (0.78, 0.16), (0.50, 0.21))),
        ],
    ],
    PartSlot.EYE: [
        [Ellipse(0.29, 0.34, 0.08, 0.08)],
        [Polygon(((0.29, 0.435), (0.385, 0.34), (0.29, 0.245), (0.195, 0.34)))],
        [Ellipse(0.29, 0.34, 0.095, 0.06)],
    ],
    PartSlot.FOOT: [
        _leg_pair(
            lambda x: [
                _leg(x),
                Polygon(((x - 0.075, -0.56), (x + 0.075, -0.56), (x + 0.075, -0.505), (x - 0.075, -0.505))),
            ]
        ),
        _leg_pair(
            lambda x: [
                _leg(x),
                Polygon(((x - 0.085, -0.50), (x + 0.085, -0.50), (x, -0.59))),
            ]
        ),
        _leg_pair(lambda x: [_leg(x, half_w=0.04, bottom=-0.55)]),
        _leg_pair(
            lambda x: [
                _leg(x),
                Polygon(((x - 0.055, -0.49), (x - 0.10, -0.585), (x - 0.005, -0.51))),
                Polygon(((x + 0.055, -0.49), (x + 0.10, -0.585), (x + 0.005, -0.51))),
            ]
        ),
    ],
    PartSlot.TAIL: [
        [
            Polygon(((-0.45, 0.06), (-0.79, 0.20), (-0.82, 0.14), (-0.45, 0.00))),
            Polygon(((-0.45, 0.04), (-0.84, 0.04), (-0.84, -0.02), (-0.45, -0.02))),
            Polygon(((-0.45, 0.00), (-0.80, -0.12), (-0.77, -0.18), (-0.45, -0.06))),
        ],
        [Polygon(((-0.45, 0.07), (-0.80, 0.15), (-0.80, 0.05), (-0.45, -0.03)))],
        [Polygon(((-0.45, 0.09), (-0.83, 0.02), (-0.45, -0.05)))],
        [
            Polygon(((-0.45, 0.06), (-0.78, 0.22), (-0.72, 0.26), (-0.45, 0.12))),
            Polygon(((-0.45, 0.00), (-0.78, -0.14), (-0.73, -0.19), (-0.45, -0.06))),
        ],
        [
            Polygon(((-0.45, 0.07), (-0.72, 0.28), (-0.76, 0.23), (-0.45, 0.02))),
            Polygon(((-0.45, 0.05), (-0.82, 0.16), (-0.83, 0.10), (-0.45, 0.00))),
            Polygon(((-0.45, 0.03), (-0.84, 0.01), (-0.84, -0.05), (-0.45, -0.03))),
            Polygon(((-0.45, -0.01), (-0.81, -0.14), (-0.79, -0.20), (-0.45, -0.06))),
            Polygon(((-0.45, -0.04), (-0.70, -0.28), (-0.65, -0.31), (-0.45, -0.09))),
        ],
        [Polygon(((-0.45, 0.12), (-0.65, 0.02), (-0.45, -0.08)))],
        [Ellipse(-0.62, 0.10, 0.17, 0.075, 25.0)],
        [
            Polygon(((-0.45, 0.10), (-0.76, 0.17), (-0.76, 0.10), (-0.45, 0.03))),
            Polygon(((-0.45, 0.00), (-0.71, -0.03), (-0.71, -0.10), (-0.45, -0.07))),
        ],
        [Polygon(((-0.45, 0.045), (-0.84, 0.075), (-0.84, 0.005), (-0.45, -0.025)))],
    ],
    PartSlot.WING: [
        [Ellipse(-0.02, 0.06, 0.22, 0.12, -20.0)],
        [Polygon(((-0.24, 0.02), (0.16, 0.16), (0.10, -0.06)))],
        [Polygon(((-0.26, 0.00), (-0.02, 0.18), (0.20, 0.10), (0.02, -0.06)))],
        [Ellipse(-0.02, 0.06, 0.12, 0.12)],
        [Ellipse(-0.02, 0.07, 0.26, 0.085, 8.0)],
        [
            Polygon(((-0.24, 0.10), (0.10, 0.16), (-0.02, 0.02))),
            Polygon(((-0.20, -0.02), (0.14, 0.04), (0.00, -0.10))),
        ],
    ],
}

# z-order back to front among bird entities; background objects paint first.
PART_Z_ORDER = [PartSlot.TAIL, PartSlot.WING, PartSlot.FOOT, PartSlot.BEAK, PartSlot.EYE]


def _catalog_bounds() -> tuple[float, float, float, float]:
    shapes: list[Shape] = list(BODY_SHAPES)
    for variants in PART_SHAPES.values():
        for variant in variants:
            shapes.extend(variant)
    xs0, ys0, xs1, ys1 = zip(*(s.bounds() for s in shapes))
    return min(xs0), min(ys0), max(xs1), max(ys1)


LOCAL_BBOX = _catalog_bounds()


def chromaticity(rgb) -> np.ndarray:
    """Illumination-invariant color coordinates (r, g) / (r + g + b)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    total = rgb.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        chroma = rgb[..., :2] / total
    return np.where(total > 0, chroma, 1.0 / 3.0)


def variant_chromaticities() -> dict[tuple[int, int], np.ndarray]:
    """Chromaticity of every (slot, variant) color, for pixel-level detectors."""
    out = {}
    for slot, colors in PART_COLORS.items():
        for v, rgb in enumerate(colors):
            out[(int(slot), v)] = chromaticity(rgb)
    return out
