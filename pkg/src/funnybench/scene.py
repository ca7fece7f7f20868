"""Class space sampling, scene descriptions, sufficient part sets, interventions.

A class is a 5-tuple of part variants; a scene is a fully symbolic description
of one image (class, present parts, background objects, viewpoint,
illumination).  Interventions edit scenes, never pixels; every edited scene is
re-rendered through the same pipeline as the originals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .catalog import (
    BG_PALETTE,
    LOCAL_BBOX,
    MAX_BG_OBJECT_ID,
    PART_COLORS,
    PartSlot,
    VARIANT_COUNTS,
)
from .shapes import ViewTransform
from .util import derive_seed

ALL_SLOTS = tuple(PartSlot)

N_CLASSES = 50

# Ranges for the continuous scene parameters.  They are not dictated by the
# task itself, so they are recorded in every dataset manifest for transparency.
ROTATION_RANGE = (-25.0, 25.0)
SCALE_RANGE = (0.7, 1.1)
OFFSET_RANGE = (-0.08, 0.08)
ILLUMINATION_RANGE = (0.7, 1.3)
BG_OBJECT_COUNT_RANGE = (3, 6)
BG_OBJECT_SCALE_RANGE = (0.06, 0.18)
BG_OBJECT_POSITION_MARGIN = 0.05
BG_MAX_BIRD_OVERLAP = 0.30

BG_SHAPE_KINDS = ("disc", "triangle", "quad")


class InterventionError(ValueError):
    """Raised for malformed interventions (unknown background object id)."""


@dataclass(frozen=True)
class BackgroundObject:
    object_id: int
    kind: str  # disc | triangle | quad
    color: tuple[float, float, float]
    position: tuple[float, float]  # image-fraction coordinates
    scale: float  # fraction of image width


@dataclass(frozen=True)
class Viewpoint:
    flip: bool = False
    rotation_deg: float = 0.0
    scale: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    class_id: int
    present_parts: frozenset[PartSlot]
    background_objects: tuple[BackgroundObject, ...]
    viewpoint: Viewpoint
    illumination: float
    seed: int

    def __post_init__(self):
        for part in self.present_parts:
            if part not in ALL_SLOTS:
                raise ValueError(f"unknown part slot {part}")
        lo, hi = ILLUMINATION_RANGE
        if not lo <= self.illumination <= hi:
            raise ValueError(f"illumination {self.illumination} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ClassDefinition:
    class_id: int
    assignment: dict[PartSlot, int]
    sufficient_sets: tuple[frozenset[PartSlot], ...]

    def variant(self, slot: PartSlot) -> int:
        return self.assignment[slot]

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self.assignment[s] for s in ALL_SLOTS)


@dataclass(frozen=True)
class ClassSpace:
    classes: tuple[ClassDefinition, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, class_id: int) -> ClassDefinition:
        return self.classes[class_id]


# --- Interventions -----------------------------------------------------------


@dataclass(frozen=True)
class RemoveParts:
    parts: frozenset[PartSlot]

    def __init__(self, parts):
        object.__setattr__(self, "parts", frozenset(parts))


@dataclass(frozen=True)
class KeepOnlyParts:
    parts: frozenset[PartSlot]

    def __init__(self, parts):
        object.__setattr__(self, "parts", frozenset(parts))


@dataclass(frozen=True)
class RemoveBackgroundObject:
    object_id: int


Intervention = RemoveParts | KeepOnlyParts | RemoveBackgroundObject


def apply_intervention(scene: SceneSpec, iv: Intervention) -> SceneSpec:
    """Apply a semantic edit to a scene, returning a new SceneSpec.

    The body is never touched; viewpoint and illumination are preserved.
    """
    if isinstance(iv, RemoveParts):
        return replace(scene, present_parts=scene.present_parts - iv.parts)
    if isinstance(iv, KeepOnlyParts):
        return replace(scene, present_parts=scene.present_parts & iv.parts)
    if isinstance(iv, RemoveBackgroundObject):
        remaining = tuple(o for o in scene.background_objects if o.object_id != iv.object_id)
        if len(remaining) == len(scene.background_objects):
            raise InterventionError(
                f"scene has no background object with id {iv.object_id}"
            )
        return replace(scene, background_objects=remaining)
    raise TypeError(f"unknown intervention {iv!r}")


# --- Sufficient part sets ----------------------------------------------------


def _is_sufficient(assignments: list[tuple[int, ...]], idx: int, slots: tuple[int, ...]) -> bool:
    """True when no other class agrees with class `idx` on every slot position in `slots`."""
    mine = assignments[idx]
    for j, other in enumerate(assignments):
        if j == idx:
            continue
        if all(other[k] == mine[k] for k in slots):
            return False
    return True


def _minimal_sufficient_sets(
    assignments: list[tuple[int, ...]], idx: int
) -> list[frozenset[PartSlot]]:
    """All minimal sufficient slot subsets for one class, smallest first.

    Iterates subsets by increasing size and skips supersets of already-found
    sufficient sets, which directly yields only the minimal ones.
    """
    found: list[tuple[int, ...]] = []
    for size in range(1, len(ALL_SLOTS) + 1):
        for combo in combinations(range(len(ALL_SLOTS)), size):
            if any(set(prev) <= set(combo) for prev in found):
                continue
            if _is_sufficient(assignments, idx, combo):
                found.append(combo)
    found.sort(key=lambda c: (len(c), c))
    return [frozenset(ALL_SLOTS[k] for k in combo) for combo in found]


def compute_sufficient_sets(space: ClassSpace, class_id: int) -> list[frozenset[PartSlot]]:
    """Minimal slot subsets that uniquely identify `class_id` within the space.

    Sorted by size, then by slot encoding.
    """
    assignments = [c.as_tuple() for c in space.classes]
    return _minimal_sufficient_sets(assignments, class_id)


# --- Sampling ----------------------------------------------------------------


def sample_class_space(seed: int, n_classes: int = N_CLASSES) -> ClassSpace:
    """Sample pairwise-distinct variant assignments and their sufficient sets.

    Deterministic for a fixed seed; duplicate tuples are rejected by retry.
    """
    rng = np.random.default_rng(derive_seed(seed, "class-space"))
    counts = [VARIANT_COUNTS[s] for s in ALL_SLOTS]
    seen: set[tuple[int, ...]] = set()
    assignments: list[tuple[int, ...]] = []
    while len(assignments) < n_classes:
        tup = tuple(int(rng.integers(0, c)) for c in counts)
        if tup in seen:
            continue
        seen.add(tup)
        assignments.append(tup)
    classes = []
    for cid, tup in enumerate(assignments):
        suff = _minimal_sufficient_sets(assignments, cid)
        classes.append(
            ClassDefinition(
                class_id=cid,
                assignment={s: tup[k] for k, s in enumerate(ALL_SLOTS)},
                sufficient_sets=tuple(suff),
            )
        )
    return ClassSpace(classes=tuple(classes), seed=seed)


def _bird_bbox_image(view: ViewTransform) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = LOCAL_BBOX
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
    img = view.local_to_image(corners)
    return img[:, 0].min(), img[:, 1].min(), img[:, 0].max(), img[:, 1].max()


def _rect_overlap(a, b) -> float:
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    return w * h


def sample_scene(
    space: ClassSpace,
    class_id: int,
    seed: int,
    resolution: int = 64,
) -> SceneSpec:
    """Sample a complete scene (all five parts) for one class.

    Deterministic for fixed (class_id, seed).  Background objects are rejected
    and redrawn while they would cover more than 30% of the bird's bounding
    box, keeping the parts visible.
    """
    if not 0 <= class_id < len(space):
        raise ValueError(f"class_id {class_id} outside [0, {len(space)})")
    rng = np.random.default_rng(derive_seed(space.seed, "scene", class_id, seed))

    flip = bool(rng.integers(0, 2))
    rotation = float(rng.uniform(*ROTATION_RANGE))
    scale = float(rng.uniform(*SCALE_RANGE))
    offset = (float(rng.uniform(*OFFSET_RANGE)), float(rng.uniform(*OFFSET_RANGE)))
    illumination = float(rng.uniform(*ILLUMINATION_RANGE))
    viewpoint = Viewpoint(flip=flip, rotation_deg=rotation, scale=scale, offset=offset)

    view = ViewTransform(
        width=resolution, height=resolution, flip=flip, rotation_deg=rotation,
        scale=scale, offset=offset,
    )
    bird_box = _bird_bbox_image(view)
    bird_area = (bird_box[2] - bird_box[0]) * (bird_box[3] - bird_box[1])

    n_objects = int(rng.integers(BG_OBJECT_COUNT_RANGE[0], BG_OBJECT_COUNT_RANGE[1] + 1))
    objects = []
    for k in range(n_objects):
        for _ in range(1000):
            kind = BG_SHAPE_KINDS[int(rng.integers(0, len(BG_SHAPE_KINDS)))]
            color = BG_PALETTE[int(rng.integers(0, len(BG_PALETTE)))]
            margin = BG_OBJECT_POSITION_MARGIN
            pos = (float(rng.uniform(margin, 1 - margin)), float(rng.uniform(margin, 1 - margin)))
            obj_scale = float(rng.uniform(*BG_OBJECT_SCALE_RANGE))
            r = obj_scale * resolution / 2.0
            cx, cy = pos[0] * resolution, pos[1] * resolution
            obj_box = (cx - r, cy - r, cx + r, cy + r)
            if _rect_overlap(obj_box, bird_box) <= BG_MAX_BIRD_OVERLAP * bird_area:
                objects.append(
                    BackgroundObject(object_id=k, kind=kind, color=color, position=pos, scale=obj_scale)
                )
                break
        else:
            raise RuntimeError("could not place background object away from the bird")
    return SceneSpec(
        class_id=class_id,
        present_parts=frozenset(ALL_SLOTS),
        background_objects=tuple(objects),
        viewpoint=viewpoint,
        illumination=illumination,
        seed=seed,
    )


def canonical_scene(class_id: int = 0) -> SceneSpec:
    """Fixed reference scene: identity viewpoint, unit illumination, no objects."""
    return SceneSpec(
        class_id=class_id,
        present_parts=frozenset(ALL_SLOTS),
        background_objects=(),
        viewpoint=Viewpoint(),
        illumination=1.0,
        seed=0,
    )
