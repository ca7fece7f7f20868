"""Procedural bird-classification benchmark with part-level scoring of saliency methods."""

__version__ = "0.1.0"

from .scene import (
    PartSlot,
    ClassSpace,
    SceneSpec,
    RemoveParts,
    KeepOnlyParts,
    RemoveBackgroundObject,
    sample_class_space,
    sample_scene,
    apply_intervention,
    compute_sufficient_sets,
    canonical_scene,
)
from .render import RenderConfig, render_scene, part_mask, dilate_mask
from .dataset import (
    AugmentationPolicy,
    DatasetManifest,
    generate_dataset,
    load_manifest,
    valid_targets,
)
from .model import (
    ReferenceCNN,
    ConstantModel,
    LinearModel,
    PartDetectorModel,
    UnsupportedCapabilityError,
)
from .wire import connect_external
from .explain import (
    Explanation,
    InputXGradient,
    IntegratedGradients,
    GradCAM,
    RISE,
    LimeGrid,
    RandomAttribution,
    SufficientSetAttribution,
    make_explainer,
)
from .interfaces import entity_masks, part_importance, important_parts, select_threshold
from .protocols import (
    EvalOptions,
    ProtocolScores,
    evaluate,
    spearman,
    aggregate,
    ground_truth_importance,
    find_contrast_pair,
)

__all__ = [
    "PartSlot",
    "ClassSpace",
    "SceneSpec",
    "RemoveParts",
    "KeepOnlyParts",
    "RemoveBackgroundObject",
    "sample_class_space",
    "sample_scene",
    "apply_intervention",
    "compute_sufficient_sets",
    "canonical_scene",
    "RenderConfig",
    "render_scene",
    "part_mask",
    "dilate_mask",
    "AugmentationPolicy",
    "DatasetManifest",
    "generate_dataset",
    "load_manifest",
    "valid_targets",
    "ReferenceCNN",
    "ConstantModel",
    "LinearModel",
    "PartDetectorModel",
    "UnsupportedCapabilityError",
    "connect_external",
    "Explanation",
    "InputXGradient",
    "IntegratedGradients",
    "GradCAM",
    "RISE",
    "LimeGrid",
    "RandomAttribution",
    "SufficientSetAttribution",
    "make_explainer",
    "entity_masks",
    "part_importance",
    "important_parts",
    "select_threshold",
    "EvalOptions",
    "ProtocolScores",
    "evaluate",
    "spearman",
    "aggregate",
    "ground_truth_importance",
    "find_contrast_pair",
]
