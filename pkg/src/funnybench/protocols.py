"""Intervention-derived ground truth and the protocol scores.

Eight quantities are reported: accuracy A, background independence BI, the
completeness checks CSDC / PC / DC, the over-completeness check D, the
rank-correlation correctness score SD, and the contrastivity score TS, plus
the aggregates Com / Cor / Con / mX.  All interventions operate on scene
descriptions and re-render through the standard pipeline; pixels are never
masked directly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import BG_OBJECT_LABEL_BASE, PartSlot
from .dataset import DatasetManifest, Sample
from .explain import BINARY, Explanation
from .interfaces import (
    DEFAULT_DILATION,
    DEFAULT_THRESHOLD_GRID,
    EntityMasks,
    entity_masks,
    important_parts,
    part_importance,
    select_threshold,
    slots_of,
)
from .render import load_image_png, load_labels_png, render_scene
from .scene import ALL_SLOTS, ClassSpace, KeepOnlyParts, RemoveBackgroundObject, RemoveParts, SceneSpec, apply_intervention

RELATIVE_DROP_RULE = 0.05  # an entity is unimportant when its drop is < |5% of f(x)|


def spearman(a, b) -> float:
    """Spearman rank correlation with average-rank ties; 0.0 for constant input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman expects two equal-length vectors")
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0.0:
        return 0.0
    return float((ra * rb).sum() / denom)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class ContrastPair:
    class_1: int
    class_2: int
    parts_1: frozenset[PartSlot]
    parts_2: frozenset[PartSlot]


def find_contrast_pair(space: ClassSpace, class_id: int) -> ContrastPair | None:
    """First pair of classes sharing exactly two disjoint parts with `class_id`.

    Candidates are scanned in class-ordinal order, pairs lexicographically, so
    the choice is deterministic.
    """
    base = space[class_id].assignment
    candidates: list[tuple[int, frozenset[PartSlot]]] = []
    for cls in space.classes:
        if cls.class_id == class_id:
            continue
        common = frozenset(s for s in ALL_SLOTS if cls.assignment[s] == base[s])
        if len(common) == 2:
            candidates.append((cls.class_id, common))
    for i in range(len(candidates)):
        for j in range(i + 1, len(candidates)):
            if candidates[i][1].isdisjoint(candidates[j][1]):
                return ContrastPair(
                    class_1=candidates[i][0],
                    class_2=candidates[j][0],
                    parts_1=candidates[i][1],
                    parts_2=candidates[j][1],
                )
    return None


@dataclass
class GroundTruthImportance:
    """Target-logit drops from removing each entity of one scene."""

    target_logit: float
    part_drops: dict[PartSlot, float]
    bg_drops: dict[int, float]  # object_id -> drop
    unimportant: set[int]  # entity labels (slots and 100+object_id)


def ground_truth_importance(model, scene: SceneSpec, space: ClassSpace, render_config,
                            target: int | None = None) -> GroundTruthImportance:
    """Render every single-removal variant and record the target-logit drops."""
    target = scene.class_id if target is None else int(target)
    image, _ = render_scene(scene, space, render_config)
    f_x = float(model.predict_logits(image)[target])
    threshold = abs(RELATIVE_DROP_RULE * f_x)
    part_drops: dict[PartSlot, float] = {}
    bg_drops: dict[int, float] = {}
    unimportant: set[int] = set()
    for slot in sorted(scene.present_parts):
        edited = apply_intervention(scene, RemoveParts({slot}))
        img, _ = render_scene(edited, space, render_config)
        drop = f_x - float(model.predict_logits(img)[target])
        part_drops[slot] = drop
        if drop < threshold:
            unimportant.add(int(slot))
    for obj in scene.background_objects:
        edited = apply_intervention(scene, RemoveBackgroundObject(obj.object_id))
        img, _ = render_scene(edited, space, render_config)
        drop = f_x - float(model.predict_logits(img)[target])
        bg_drops[obj.object_id] = drop
        if drop < threshold:
            unimportant.add(BG_OBJECT_LABEL_BASE + obj.object_id)
    return GroundTruthImportance(
        target_logit=f_x, part_drops=part_drops, bg_drops=bg_drops, unimportant=unimportant
    )


# --- Per-sample protocol arithmetic (pure helpers) ----------------------------


def csdc_sample(p_slots: frozenset[PartSlot], sufficient_sets) -> float:
    """Largest overlap ratio between P(e) and any sufficient part set."""
    best = 0.0
    for ss in sufficient_sets:
        best = max(best, len(p_slots & ss) / len(ss))
    return best


def distractibility_sample(p_entities: set[int], unimportant: set[int]) -> float | None:
    """Overlap fraction between P(e) and the unimportant entities (None if none)."""
    if not unimportant:
        return None
    return len(p_entities & unimportant) / len(unimportant)


def sd_sample(pi_scores: dict[int, float], part_drops: dict[PartSlot, float]) -> float:
    """Spearman correlation between PI and the actual drops over the part slots."""
    slots = sorted(part_drops)
    pi_vec = [pi_scores.get(int(s), 0.0) for s in slots]
    drop_vec = [part_drops[s] for s in slots]
    return spearman(pi_vec, drop_vec)


def accuracy(predictions, targets) -> float:
    """Fraction of argmax-correct predictions."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must align")
    return float(np.mean(predictions == targets))


def background_independence(gts: list[GroundTruthImportance]) -> tuple[float, int]:
    """Fraction of background objects whose removal barely moves the target logit.

    Counts over all (sample, object) pairs; the denominator is the total
    object count (N times the mean objects per image).  Returns (BI, total).
    """
    total = sum(len(gt.bg_drops) for gt in gts)
    if total == 0:
        return 1.0, 0
    independent = sum(
        1
        for gt in gts
        for drop in gt.bg_drops.values()
        if abs(RELATIVE_DROP_RULE * gt.target_logit) > drop
    )
    return independent / total, total


def aggregate_scores(csdc: float, pc: float, dc: float, d: float, sd: float, ts: float) -> tuple[float, float, float, float]:
    """(Com, Cor, Con, mX) from the raw protocol scores."""
    com = (float(np.mean([csdc, pc, dc])) + d) / 2.0
    cor = sd
    con = ts
    mx = float(np.mean([com, cor, con]))
    return com, cor, con, mx


@dataclass
class ProtocolScores:
    a: float
    bi: float
    csdc: float
    pc: float
    dc: float
    d: float
    sd: float
    ts: float
    com: float
    cor: float
    con: float
    mx: float
    t_star: float
    counts: dict[str, tuple[int, int]]  # protocol -> (kept, total)

    def as_dict(self) -> dict:
        return {
            "A": self.a, "BI": self.bi, "CSDC": self.csdc, "PC": self.pc,
            "DC": self.dc, "D": self.d, "SD": self.sd, "TS": self.ts,
            "Com": self.com, "Cor": self.cor, "Con": self.con, "mX": self.mx,
            "t_star": self.t_star,
            "counts": {k: list(v) for k, v in self.counts.items()},
        }


def aggregate(a, bi, csdc, pc, dc, d, sd, ts, t_star, counts) -> ProtocolScores:
    com, cor, con, mx = aggregate_scores(csdc, pc, dc, d, sd, ts)
    return ProtocolScores(
        a=a, bi=bi, csdc=csdc, pc=pc, dc=dc, d=d, sd=sd, ts=ts,
        com=com, cor=cor, con=con, mx=mx, t_star=t_star, counts=counts,
    )


# --- Evaluation orchestration --------------------------------------------------


@dataclass(frozen=True)
class EvalOptions:
    threshold: float | None = None  # None -> select on the calibration slice
    threshold_grid: tuple[float, ...] = DEFAULT_THRESHOLD_GRID
    calibration_size: int = 100
    limit: int | None = None
    dilation: int = DEFAULT_DILATION
    threads: int = 1


@dataclass
class SampleContext:
    """Per-sample extras passed to explainers (ignored by standard methods)."""

    sample_id: str
    scene: SceneSpec
    labels: np.ndarray
    space: ClassSpace


@dataclass
class _SampleData:
    sample: Sample
    image: np.ndarray
    labels: np.ndarray
    masks: EntityMasks
    logits: np.ndarray
    pred: int
    gt: GroundTruthImportance
    explanation: Explanation
    pi: dict[int, float]
    pi_defined: bool
    pair: ContrastPair | None
    ts_kept: bool = False
    ts_score: float | None = None
    render_cache: dict = field(default_factory=dict)


@dataclass
class EvalResult:
    scores: ProtocolScores
    records: list[dict]
    n_evaluated: int


class Evaluator:
    """Runs every protocol for one (model, explainer, dataset) combination."""

    def __init__(self, model, explainer, manifest: DatasetManifest, data_root,
                 options: EvalOptions = EvalOptions()):
        self.model = model
        self.explainer = explainer
        self.manifest = manifest
        self.space = manifest.class_space
        self.render_config = manifest.render_config
        self.root = Path(data_root)
        self.options = options
        self._pairs = {c.class_id: find_contrast_pair(self.space, c.class_id)
                       for c in self.space.classes}

    # -- per-sample ingredients -------------------------------------------------

    def _load_sample(self, sample: Sample) -> tuple[np.ndarray, np.ndarray]:
        image = load_image_png(self.root / sample.image_path)
        labels = load_labels_png(self.root / sample.partmap_path)
        return image, labels

    def _prepare(self, sample: Sample) -> _SampleData:
        image, labels = self._load_sample(sample)
        masks = entity_masks(labels, self.options.dilation)
        logits = self.model.predict_logits(image)
        target = sample.primary_class
        gt = ground_truth_importance(self.model, sample.scene, self.space,
                                     self.render_config, target=target)
        context = SampleContext(sample.sample_id, sample.scene, labels, self.space)
        explanation = self.explainer.explain(self.model, image, target, context)
        pi = part_importance(explanation, masks)
        data = _SampleData(
            sample=sample, image=image, labels=labels, masks=masks,
            logits=np.asarray(logits, dtype=np.float64), pred=int(np.argmax(logits)),
            gt=gt, explanation=explanation, pi=pi.scores, pi_defined=pi.defined,
            pair=self._pairs.get(sample.primary_class),
        )
        self._prepare_ts(data, context)
        return data

    def _prepare_ts(self, data: _SampleData, context: SampleContext) -> None:
        pair = data.pair
        if pair is None or data.explanation.kind == BINARY:
            return
        scene = data.sample.scene
        logits_full = data.logits
        removed = {}
        for parts in (pair.parts_1, pair.parts_2):
            edited = apply_intervention(scene, RemoveParts(parts))
            img, _ = render_scene(edited, self.space, self.render_config)
            removed[parts] = np.asarray(self.model.predict_logits(img), dtype=np.float64)
        drop_1_own = logits_full[pair.class_1] - removed[pair.parts_1][pair.class_1]
        drop_1_other = logits_full[pair.class_1] - removed[pair.parts_2][pair.class_1]
        drop_2_own = logits_full[pair.class_2] - removed[pair.parts_2][pair.class_2]
        drop_2_other = logits_full[pair.class_2] - removed[pair.parts_1][pair.class_2]
        if not (drop_1_own > drop_1_other and drop_2_own > drop_2_other):
            return
        e1 = self.explainer.explain(self.model, data.image, pair.class_1, context)
        e2 = self.explainer.explain(self.model, data.image, pair.class_2, context)
        pi1 = part_importance(e1, data.masks).scores
        pi2 = part_importance(e2, data.masks).scores

        def sum_over(pi, parts):
            return sum(pi.get(int(s), 0.0) for s in parts)

        first = sum_over(pi1, pair.parts_1) > sum_over(pi2, pair.parts_1)
        second = sum_over(pi1, pair.parts_2) < sum_over(pi2, pair.parts_2)
        data.ts_kept = True
        data.ts_score = (float(first) + float(second)) / 2.0

    # -- threshold-dependent pieces ----------------------------------------------

    def _p_entities(self, data: _SampleData, t: float) -> set[int]:
        key = ("P", t)
        if key not in data.render_cache:
            data.render_cache[key] = important_parts(data.explanation, data.masks, t)
        return data.render_cache[key]

    def _argmax_after(self, data: _SampleData, kind: str, slots: frozenset[PartSlot]) -> int:
        key = (kind, slots)
        cache = data.render_cache
        if key not in cache:
            if kind == "keep":
                edited = apply_intervention(data.sample.scene, KeepOnlyParts(slots))
            else:
                edited = apply_intervention(data.sample.scene, RemoveParts(slots))
            img, _ = render_scene(edited, self.space, self.render_config)
            cache[key] = int(np.argmax(self.model.predict_logits(img)))
        return cache[key]

    def _completeness_at(self, items: list[_SampleData], t: float) -> tuple[float, float, float, float]:
        csdc_vals = []
        pc_vals = []
        dc_vals = []
        d_vals = []
        for data in items:
            p_entities = self._p_entities(data, t)
            p_slots = slots_of(p_entities)
            if data.pred == data.sample.primary_class:
                csdc_vals.append(
                    csdc_sample(p_slots, self.space[data.sample.primary_class].sufficient_sets)
                )
            pc_vals.append(float(self._argmax_after(data, "keep", p_slots) == data.pred))
            dc_vals.append(float(self._argmax_after(data, "remove", p_slots) != data.pred))
            overlap = distractibility_sample(p_entities, data.gt.unimportant)
            if overlap is not None:
                d_vals.append(overlap)
        csdc = float(np.mean(csdc_vals)) if csdc_vals else 0.0
        pc = float(np.mean(pc_vals)) if pc_vals else 0.0
        dc = float(np.mean(dc_vals)) if dc_vals else 0.0
        d = 1.0 - float(np.mean(d_vals)) if d_vals else 0.0
        return csdc, pc, dc, d

    # -- full run ---------------------------------------------------------------

    def run(self) -> EvalResult:
        samples = list(self.manifest.test)
        if self.options.limit is not None:
            samples = samples[: self.options.limit]
        if not samples:
            raise ValueError("no samples to evaluate")

        if self.options.threads > 1:
            with ThreadPoolExecutor(max_workers=self.options.threads) as pool:
                items = list(pool.map(self._prepare, samples))
        else:
            items = [self._prepare(s) for s in samples]

        if self.options.threshold is not None:
            t_star = float(self.options.threshold)
        else:
            calib = items[: min(self.options.calibration_size, len(items))]
            t_star = select_threshold(
                lambda t: self._completeness_at(calib, t), self.options.threshold_grid
            )

        csdc, pc, dc, d = self._completeness_at(items, t_star)

        n = len(items)
        a = accuracy([data.pred for data in items],
                     [data.sample.primary_class for data in items])
        bi, total_objects = background_independence([data.gt for data in items])

        if any(data.explanation.kind == BINARY for data in items):
            sd = 0.0
            sd_kept = 0
            ts = 0.0
            ts_kept_n = 0
        else:
            rhos = [sd_sample(data.pi, data.gt.part_drops) for data in items]
            sd = 0.5 + float(np.mean(rhos)) / 2.0 if rhos else 0.0
            sd_kept = len(rhos)
            ts_scores = [data.ts_score for data in items if data.ts_kept]
            ts = float(np.mean(ts_scores)) if ts_scores else 0.0
            ts_kept_n = len(ts_scores)

        csdc_kept = sum(1 for data in items if data.pred == data.sample.primary_class)
        d_kept = sum(1 for data in items if data.gt.unimportant)
        counts = {
            "A": (n, n),
            "BI": (total_objects, total_objects),
            "CSDC": (csdc_kept, n),
            "PC": (n, n),
            "DC": (n, n),
            "D": (d_kept, n),
            "SD": (sd_kept, n),
            "TS": (ts_kept_n, n),
        }
        scores = aggregate(a, bi, csdc, pc, dc, d, sd, ts, t_star, counts)
        records = [self._record(data, t_star) for data in items]
        return EvalResult(scores=scores, records=records, n_evaluated=n)

    def _record(self, data: _SampleData, t: float) -> dict:
        p_entities = self._p_entities(data, t)
        return {
            "sample_id": data.sample.sample_id,
            "target": data.sample.primary_class,
            "predicted": data.pred,
            "correct": data.pred == data.sample.primary_class,
            "target_logit": data.gt.target_logit,
            "part_drops": {str(int(s)): v for s, v in data.gt.part_drops.items()},
            "bg_drops": {str(k): v for k, v in data.gt.bg_drops.items()},
            "unimportant_entities": sorted(data.gt.unimportant),
            "important_entities": sorted(p_entities),
            "pi_defined": data.pi_defined,
            "pi": {str(k): v for k, v in sorted(data.pi.items())},
            "ts_pair": (
                [data.pair.class_1, data.pair.class_2] if data.pair is not None else None
            ),
            "ts_kept": data.ts_kept,
            "ts_score": data.ts_score,
        }


def evaluate(model, explainer, manifest: DatasetManifest, data_root,
             options: EvalOptions = EvalOptions()) -> EvalResult:
    """Run the full protocol suite; see Evaluator."""
    return Evaluator(model, explainer, manifest, data_root, options).run()
