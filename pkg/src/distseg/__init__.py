"""Post-processing and evaluation for distributional instance segmentation."""

from .confidence import ConfidenceMask, ConfidenceParams, extract, required_support, score_confidence_mask
from .masks import BinaryMask, DimensionError, MalformedMaskError, UndefinedOverlapError, decode, encode, iog, iop, iou
from .metrics import EvalReport, MatchSpec, average_precision, average_recall, evaluate, match, mr_at_hp, roc_auc
from .model import GroundTruthImage, Hypothesis, Instance, SampleSet, ValidationError, canonical_order, validate
from .nms import NmsParams, standard_nms, union_nms
from .picksim import PickSimConfig, PickSimResult, estimate_dataset, estimate_double_pick, pickable_area_fraction
from .synth import Scene, SceneSpec, containment_probability, generate_scene, sample_hypotheses

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "ConfidenceMask",
    "ConfidenceParams",
    "DimensionError",
    "EvalReport",
    "GroundTruthImage",
    "Hypothesis",
    "Instance",
    "MalformedMaskError",
    "MatchSpec",
    "NmsParams",
    "PickSimConfig",
    "PickSimResult",
    "SampleSet",
    "Scene",
    "SceneSpec",
    "UndefinedOverlapError",
    "ValidationError",
    "average_precision",
    "average_recall",
    "canonical_order",
    "containment_probability",
    "decode",
    "encode",
    "estimate_dataset",
    "estimate_double_pick",
    "evaluate",
    "extract",
    "generate_scene",
    "iog",
    "iop",
    "iou",
    "match",
    "mr_at_hp",
    "pickable_area_fraction",
    "required_support",
    "roc_auc",
    "sample_hypotheses",
    "score_confidence_mask",
    "standard_nms",
    "union_nms",
    "validate",
]
