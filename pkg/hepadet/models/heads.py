"""ROI classification head."""

import logging
from typing import List, Mapping, Sequence

import numpy as np

from hepadet.autodiff.graph import Graph
from hepadet.autodiff.ops import OPS, RunContext, softmax
from hepadet.constants import CLASS_NAMES
from hepadet.detection.boxes import RoiBox
from hepadet.detection.evaluate import Detection

logger = logging.getLogger(__name__)


def add_roi_classifier(
    graph: Graph,
    features: int,
    rois: int,
    channels: int,
    pool: int,
    hidden: int,
    stride: float,
    dropout: float = 0.5,
) -> int:
    """ROI max-pool, dense, relu, dropout and a dense layer to class logits.

    ``rois`` is a node holding ``[R, 5]`` rows of (batch, x0, y0, x1, y1)
    in image pixels; ``stride`` maps them onto ``features``.
    """
    flat = channels * pool * pool
    w1 = graph.parameter("cls.hidden.weight", shape=(flat, hidden), fan_in=flat)
    b1 = graph.parameter("cls.hidden.bias", np.zeros(hidden))
    w2 = graph.parameter("cls.out.weight", shape=(hidden, len(CLASS_NAMES)), fan_in=hidden)
    b2 = graph.parameter("cls.out.bias", np.zeros(len(CLASS_NAMES)))
    pooled = graph.apply("roi_maxpool", [features, rois], pool=pool, stride=stride)
    node = graph.apply("reshape", [pooled], shape=(-1, flat))
    node = graph.apply("relu", [graph.apply("dense", [node, w1, b1])])
    node = graph.apply("dropout", [node], rate=dropout)
    return graph.apply("dense", [node, w2, b2], label="cls.logits")


def roi_rows(rois: Sequence, batch_index: int = 0) -> np.ndarray:
    """``[R, 5]`` rows for the ROI pooling op."""
    rows = [(batch_index,) + tuple(getattr(roi, "coords", roi)) for roi in rois]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 5)


def classify_rois(
    fused_features: np.ndarray,
    rois: Sequence,
    head_weights: Mapping[str, np.ndarray],
    pool_size: int,
    stride: float = 1.0,
    source_phase: str = "",
) -> List[Detection]:
    """Class probabilities for each ROI on a ``[1, C, H, W]`` feature map.

    Returns
    -------
    List[Detection]
        One per ROI, in input order.
    """
    ctx = RunContext()
    features = np.asarray(fused_features, dtype=np.float64)
    if features.ndim == 3:
        features = features[None]
    pooled, _ = OPS["roi_maxpool"].forward([features, roi_rows(rois)], ctx, pool=pool_size, stride=stride)
    flat = pooled.reshape(len(pooled), -1)
    hidden = np.maximum(flat @ head_weights["cls.hidden.weight"] + head_weights["cls.hidden.bias"], 0.0)
    logits = hidden @ head_weights["cls.out.weight"] + head_weights["cls.out.bias"]
    probs = softmax(logits)
    detections = []
    for roi, row in zip(rois, probs):
        box = roi if isinstance(roi, RoiBox) else RoiBox(*roi)
        detections.append(Detection(box, row, source_phase))
    return detections
