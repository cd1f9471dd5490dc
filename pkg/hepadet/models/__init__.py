"""Backbones, pyramid fusion, the cross-phase relation and the ROI head."""

from .backbone import (
    FeaturePyramid,
    NetConfig,
    StageShape,
    add_backbone,
    build_backbone,
    concat_shape,
    default_contract,
    extract_features,
    parameter_count,
    shape_trace,
    weighted_layer_count,
)
from .heads import add_roi_classifier, classify_rois
from .pyramid import add_fusion, fuse_pyramid
from .relation import RelationSpec, RelationWeights, add_relation, register_phases, relate, relate_bruteforce

__all__ = [
    "FeaturePyramid",
    "NetConfig",
    "RelationSpec",
    "RelationWeights",
    "StageShape",
    "add_backbone",
    "add_fusion",
    "add_relation",
    "add_roi_classifier",
    "build_backbone",
    "classify_rois",
    "concat_shape",
    "default_contract",
    "extract_features",
    "fuse_pyramid",
    "parameter_count",
    "register_phases",
    "relate",
    "relate_bruteforce",
    "shape_trace",
    "weighted_layer_count",
]
