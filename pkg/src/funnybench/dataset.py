"""Dataset generation: splits, missing-part augmentation, manifest persistence.

Directory layout:

    root/manifest.json
    root/{train,test}/images/{id}.png
    root/{train,test}/maps/{id}.png

The manifest is canonical UTF-8 JSON (sorted keys, repr-precision floats) with
an explicit schema_version, so regeneration with the same seed is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import PartSlot
from .render import RenderConfig, image_to_png_bytes, labels_to_png_bytes, render_scene
from .scene import (
    ALL_SLOTS,
    BG_OBJECT_COUNT_RANGE,
    BG_OBJECT_SCALE_RANGE,
    ILLUMINATION_RANGE,
    OFFSET_RANGE,
    ROTATION_RANGE,
    SCALE_RANGE,
    BackgroundObject,
    ClassDefinition,
    ClassSpace,
    SceneSpec,
    Viewpoint,
    sample_class_space,
    sample_scene,
)
from .util import canonical_json_bytes, derive_seed
from .validation import check_fraction

MANIFEST_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class AugmentationPolicy:
    """Missing-part augmentation for the train split.

    A `fraction_with_removals` share of train samples gets n parts removed
    with n drawn uniformly from {1..5}; the rest keep all five parts, so the
    removal count over the whole split is supported on {0..5}.
    """

    fraction_with_removals: float = 0.5

    def __post_init__(self):
        check_fraction(self.fraction_with_removals, "fraction_with_removals")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    scene: SceneSpec
    image_path: str  # relative to the dataset root
    partmap_path: str
    primary_class: int
    valid_target_set: frozenset[int]


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: str
    global_seed: int
    class_space: ClassSpace
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]
    n_test: int
    mean_bg_objects: float  # over the test split
    render_config: RenderConfig
    policy: AugmentationPolicy

    def split(self, name: str) -> tuple[Sample, ...]:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise KeyError(name)


def valid_targets(space: ClassSpace, scene: SceneSpec) -> set[int]:
    """Every class whose assignment agrees with the scene's class on all present parts."""
    own = space[scene.class_id].assignment
    out = set()
    for cls in space.classes:
        if all(cls.assignment[s] == own[s] for s in scene.present_parts):
            out.add(cls.class_id)
    return out


def _augmented_scene(scene: SceneSpec, policy: AugmentationPolicy, rng: np.random.Generator) -> SceneSpec:
    if rng.random() >= policy.fraction_with_removals:
        return scene
    n = int(rng.integers(1, 6))
    removed = rng.choice(len(ALL_SLOTS), size=n, replace=False)
    keep = frozenset(s for i, s in enumerate(ALL_SLOTS) if i not in set(int(r) for r in removed))
    from .scene import RemoveParts, apply_intervention

    return apply_intervention(scene, RemoveParts(set(ALL_SLOTS) - keep))


def generate_dataset(
    root: str | Path,
    sizes: dict[str, int],
    seed: int,
    policy: AugmentationPolicy = AugmentationPolicy(),
    render_config: RenderConfig = RenderConfig(),
    space: ClassSpace | None = None,
) -> DatasetManifest:
    """Generate images, label maps and the manifest under `root`.

    Test samples are always complete birds; the train split is augmented per
    the policy.  Classes cycle round-robin so each split is balanced.
    Deterministic for a fixed seed (per-sample seeds are hashes of
    (seed, split, index)).
    """
    for name in ("train", "test"):
        if sizes.get(name, 0) < 1:
            raise ValueError(f"{name} size must be >= 1")
    root = Path(root)
    if space is None:
        space = sample_class_space(seed)

    splits: dict[str, list[Sample]] = {}
    for split_name in ("train", "test"):
        n = sizes[split_name]
        (root / split_name / "images").mkdir(parents=True, exist_ok=True)
        (root / split_name / "maps").mkdir(parents=True, exist_ok=True)
        samples = []
        for i in range(n):
            class_id = i % len(space)
            sample_seed = derive_seed(seed, split_name, i)
            scene = sample_scene(space, class_id, sample_seed, resolution=render_config.resolution)
            if split_name == "train":
                aug_rng = np.random.default_rng(derive_seed(seed, split_name, i, "augment"))
                scene = _augmented_scene(scene, policy, aug_rng)
            sample_id = f"{split_name}-{i:05d}"
            image, labels = render_scene(scene, space, render_config)
            image_rel = f"{split_name}/images/{sample_id}.png"
            map_rel = f"{split_name}/maps/{sample_id}.png"
            _write_file(root / image_rel, image_to_png_bytes(image))
            _write_file(root / map_rel, labels_to_png_bytes(labels))
            samples.append(
                Sample(
                    sample_id=sample_id,
                    scene=scene,
                    image_path=image_rel,
                    partmap_path=map_rel,
                    primary_class=class_id,
                    valid_target_set=frozenset(valid_targets(space, scene)),
                )
            )
        splits[split_name] = samples

    test = splits["test"]
    mean_bg = float(np.mean([len(s.scene.background_objects) for s in test]))
    manifest = DatasetManifest(
        schema_version=MANIFEST_SCHEMA_VERSION,
        global_seed=seed,
        class_space=space,
        train=tuple(splits["train"]),
        test=tuple(test),
        n_test=len(test),
        mean_bg_objects=mean_bg,
        render_config=render_config,
        policy=policy,
    )
    _write_file(root / "manifest.json", canonical_json_bytes(manifest_to_dict(manifest)))
    return manifest


def _write_file(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


# --- Serialization -----------------------------------------------------------


def _scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "class_id": scene.class_id,
        "present_parts": sorted(int(p) for p in scene.present_parts),
        "background_objects": [
            {
                "object_id": o.object_id,
                "kind": o.kind,
                "color": list(o.color),
                "position": list(o.position),
                "scale": o.scale,
            }
            for o in scene.background_objects
        ],
        "viewpoint": {
            "flip": scene.viewpoint.flip,
            "rotation_deg": scene.viewpoint.rotation_deg,
            "scale": scene.viewpoint.scale,
            "offset": list(scene.viewpoint.offset),
        },
        "illumination": scene.illumination,
        "seed": scene.seed,
    }


def _scene_from_dict(d: dict) -> SceneSpec:
    return SceneSpec(
        class_id=d["class_id"],
        present_parts=frozenset(PartSlot(p) for p in d["present_parts"]),
        background_objects=tuple(
            BackgroundObject(
                object_id=o["object_id"],
                kind=o["kind"],
                color=tuple(o["color"]),
                position=tuple(o["position"]),
                scale=o["scale"],
            )
            for o in d["background_objects"]
        ),
        viewpoint=Viewpoint(
            flip=d["viewpoint"]["flip"],
            rotation_deg=d["viewpoint"]["rotation_deg"],
            scale=d["viewpoint"]["scale"],
            offset=tuple(d["viewpoint"]["offset"]),
        ),
        illumination=d["illumination"],
        seed=d["seed"],
    )


def _space_to_dict(space: ClassSpace) -> dict:
    return {
        "seed": space.seed,
        "classes": [
            {
                "class_id": c.class_id,
                "assignment": {str(int(s)): v for s, v in c.assignment.items()},
                "sufficient_sets": [sorted(int(p) for p in ss) for ss in c.sufficient_sets],
            }
            for c in space.classes
        ],
    }


def _space_from_dict(d: dict) -> ClassSpace:
    classes = []
    for c in d["classes"]:
        classes.append(
            ClassDefinition(
                class_id=c["class_id"],
                assignment={PartSlot(int(k)): v for k, v in c["assignment"].items()},
                sufficient_sets=tuple(
                    frozenset(PartSlot(p) for p in ss) for ss in c["sufficient_sets"]
                ),
            )
        )
    return ClassSpace(classes=tuple(classes), seed=d["seed"])


def _sample_to_dict(s: Sample) -> dict:
    return {
        "sample_id": s.sample_id,
        "scene": _scene_to_dict(s.scene),
        "image_path": s.image_path,
        "partmap_path": s.partmap_path,
        "primary_class": s.primary_class,
        "valid_targets": sorted(s.valid_target_set),
    }


def _sample_from_dict(d: dict) -> Sample:
    return Sample(
        sample_id=d["sample_id"],
        scene=_scene_from_dict(d["scene"]),
        image_path=d["image_path"],
        partmap_path=d["partmap_path"],
        primary_class=d["primary_class"],
        valid_target_set=frozenset(d["valid_targets"]),
    )


def manifest_to_dict(m: DatasetManifest) -> dict:
    return {
        "schema_version": m.schema_version,
        "global_seed": m.global_seed,
        "class_space": _space_to_dict(m.class_space),
        "splits": {
            "train": [_sample_to_dict(s) for s in m.train],
            "test": [_sample_to_dict(s) for s in m.test],
        },
        "n_test": m.n_test,
        "mean_bg_objects": m.mean_bg_objects,
        "render_config": {
            "resolution": m.render_config.resolution,
            "canvas_color": list(m.render_config.canvas_color),
            "shading_bands": m.render_config.shading_bands,
            "outline_width": m.render_config.outline_width,
        },
        "augmentation_policy": {
            "fraction_with_removals": m.policy.fraction_with_removals,
            "removal_count_support": [0, 1, 2, 3, 4, 5],
        },
        "parameter_ranges": {
            "rotation_deg": list(ROTATION_RANGE),
            "scale": list(SCALE_RANGE),
            "offset": list(OFFSET_RANGE),
            "illumination": list(ILLUMINATION_RANGE),
            "bg_object_count": list(BG_OBJECT_COUNT_RANGE),
            "bg_object_scale": list(BG_OBJECT_SCALE_RANGE),
        },
    }


def manifest_from_dict(d: dict) -> DatasetManifest:
    version = d.get("schema_version", "")
    if version.split(".")[0] != MANIFEST_SCHEMA_VERSION.split(".")[0]:
        raise ValueError(f"unsupported manifest schema version {version!r}")
    rc = d["render_config"]
    return DatasetManifest(
        schema_version=version,
        global_seed=d["global_seed"],
        class_space=_space_from_dict(d["class_space"]),
        train=tuple(_sample_from_dict(s) for s in d["splits"]["train"]),
        test=tuple(_sample_from_dict(s) for s in d["splits"]["test"]),
        n_test=d["n_test"],
        mean_bg_objects=d["mean_bg_objects"],
        render_config=RenderConfig(
            resolution=rc["resolution"],
            canvas_color=tuple(rc["canvas_color"]),
            shading_bands=rc["shading_bands"],
            outline_width=rc["outline_width"],
        ),
        policy=AugmentationPolicy(
            fraction_with_removals=d["augmentation_policy"]["fraction_with_removals"]
        ),
    )


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path, encoding="utf-8") as fh:
        return manifest_from_dict(json.load(fh))
