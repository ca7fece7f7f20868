"""Interface functions mapping explanations to part-level quantities.

PI gives a per-entity importance score (signed attribution sum within the
dilated entity mask; undefined for binary maps).  P gives the set of entities
an explanation marks important, controlled by the threshold fraction t.
Entities are the five part slots plus background objects present in the label
map; the body and canvas never count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import BG_OBJECT_LABEL_BASE, PartSlot
from .explain import ATTRIBUTION, BINARY, Explanation
from .render import dilate_mask
from .validation import check_fraction

DEFAULT_THRESHOLD_GRID = (0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25)
DEFAULT_DILATION = 5


@dataclass(frozen=True)
class EntityMasks:
    """Per-entity raw and dilated masks for one label map."""

    masks: dict[int, np.ndarray]
    dilated: dict[int, np.ndarray]
    pixel_counts: dict[int, int]

    @property
    def entities(self) -> list[int]:
        return sorted(self.masks)


def entity_masks(labels: np.ndarray, dilation: int = DEFAULT_DILATION) -> EntityMasks:
    """Extract masks for every scoreable entity (part slots and bg objects)."""
    labels = np.asarray(labels)
    masks: dict[int, np.ndarray] = {}
    dilated: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for label in np.unique(labels):
        label = int(label)
        if not (1 <= label <= 5 or label >= BG_OBJECT_LABEL_BASE):
            continue
        mask = labels == label
        masks[label] = mask
        dilated[label] = dilate_mask(mask, dilation)
        counts[label] = int(mask.sum())
    return EntityMasks(masks=masks, dilated=dilated, pixel_counts=counts)


@dataclass
class PartImportance:
    """PI(.) output: per-entity scores; undefined for binary-map explanations."""

    scores: dict[int, float]
    defined: bool


def part_importance(expl: Explanation, masks: EntityMasks) -> PartImportance:
    """Signed attribution sum inside each dilated entity mask."""
    if expl.kind == BINARY:
        return PartImportance(scores={}, defined=False)
    data = expl.data
    scores = {
        entity: float(data[masks.dilated[entity]].sum()) for entity in masks.entities
    }
    return PartImportance(scores=scores, defined=True)


def important_parts(expl: Explanation, masks: EntityMasks, t: float) -> set[int]:
    """P(.) output: entities the explanation marks important at threshold t.

    Attribution maps: an entity is important when its positive-clamped mass
    inside the dilated mask exceeds t times the total positive mass of the map
    (empty set when the map has no positive mass).  Binary maps: an entity is
    important when the explanation covers at least t of its pixels.
    """
    check_fraction(t, "t", open_interval=True)
    out: set[int] = set()
    if expl.kind == ATTRIBUTION:
        positive = np.clip(expl.data, 0.0, None)
        total = float(positive.sum())
        if total <= 0.0:
            return out
        for entity in masks.entities:
            if float(positive[masks.dilated[entity]].sum()) > t * total:
                out.add(entity)
        return out
    mask = expl.data
    for entity in masks.entities:
        covered = int((mask & masks.dilated[entity]).sum())
        if covered >= t * masks.pixel_counts[entity]:
            out.add(entity)
    return out


def slots_of(entities: set[int]) -> frozenset[PartSlot]:
    """Restrict an entity set to bird part slots."""
    return frozenset(PartSlot(e) for e in entities if 1 <= e <= 5)


def select_threshold(eval_fn, grid=DEFAULT_THRESHOLD_GRID) -> float:
    """Pick t maximizing mean(mean(CSDC, PC, DC), D); ties go to smaller t.

    `eval_fn(t)` must return the tuple (CSDC, PC, DC, D) measured on a
    calibration slice.
    """
    if not grid:
        raise ValueError("threshold grid must be non-empty")
    best_t = None
    best_score = -np.inf
    for t in sorted(grid):
        csdc, pc, dc, d = eval_fn(t)
        score = (np.mean([csdc, pc, dc]) + d) / 2.0
        if score > best_score:
            best_score = score
            best_t = t
    return float(best_t)
