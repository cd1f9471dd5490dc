"""Boxes, anchors, proposals, the texture gate and evaluation."""

from .anchors import AnchorSpec, anchor_array, gen_anchors, label_anchors, sample_rois
from .boxes import RoiBox, clip_boxes, iou, iou_matrix, nms, nms_indices
from .evaluate import Detection, EvalCounts, EvalTable, GroundTruthBox, match_and_score, select_top
from .gate import GateModel, TextureFeatures, fit_gate, texture_features, texture_gate
from .proposal import propose, select_proposals

__all__ = [
    "AnchorSpec",
    "Detection",
    "EvalCounts",
    "EvalTable",
    "GateModel",
    "GroundTruthBox",
    "RoiBox",
    "TextureFeatures",
    "anchor_array",
    "clip_boxes",
    "fit_gate",
    "gen_anchors",
    "iou",
    "iou_matrix",
    "label_anchors",
    "match_and_score",
    "nms",
    "nms_indices",
    "propose",
    "sample_rois",
    "select_proposals",
    "select_top",
    "texture_features",
    "texture_gate",
]
