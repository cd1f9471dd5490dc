"""Objectness head and proposal selection."""

import logging
from typing import TYPE_CHECKING, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from hepadet.autodiff.graph import Graph
from hepadet.autodiff.ops import OPS, RunContext
from hepadet.errors import ShapeError

from .anchors import AnchorSpec, anchor_array
from .boxes import RoiBox, clip_boxes, nms_indices

if TYPE_CHECKING:
    from hepadet.models.backbone import FeaturePyramid

logger = logging.getLogger(__name__)


def add_rpn_head(
    graph: Graph,
    levels: Sequence[Tuple[int, Tuple[int, int]]],
    channels: int,
    per_cell: int,
    label: str = "rpn.logits",
) -> int:
    """Shared 3x3 conv, relu and 1x1 objectness conv over every level.

    ``levels`` pairs each fused node with its ``(H, W)``. Returns the node
    of the ``[N, A]`` logits, flattened level by level in the anchor order
    of :func:`anchor_array`.
    """
    conv_w = graph.parameter("rpn.conv.weight", shape=(channels, channels, 3, 3), fan_in=9 * channels)
    conv_b = graph.parameter("rpn.conv.bias", np.zeros(channels))
    logit_w = graph.parameter("rpn.logits.weight", shape=(per_cell, channels, 1, 1), fan_in=channels)
    logit_b = graph.parameter("rpn.logits.bias", np.zeros(per_cell))
    flat = []
    for node, (height, width) in levels:
        hidden = graph.apply("relu", [graph.apply("conv2d", [node, conv_w, conv_b], pad=1)])
        logits = graph.apply("conv2d", [hidden, logit_w, logit_b])
        logits = graph.apply("transpose", [logits], axes=(0, 2, 3, 1))
        flat.append(graph.apply("reshape", [logits], shape=(-1, height * width * per_cell)))
    return graph.apply("concat", flat, label=label, axis=1)


def objectness(fused: "FeaturePyramid", head: Mapping[str, np.ndarray]) -> np.ndarray:
    """Eager objectness logits ``[N, A]`` for a fused pyramid."""
    ctx = RunContext()
    conv = OPS["conv2d"]
    flat = []
    for _, level in fused.levels:
        hidden, _ = conv.forward([level, head["rpn.conv.weight"], head["rpn.conv.bias"]], ctx, pad=1)
        logits, _ = conv.forward([np.maximum(hidden, 0.0), head["rpn.logits.weight"], head["rpn.logits.bias"]], ctx)
        flat.append(logits.transpose(0, 2, 3, 1).reshape(logits.shape[0], -1))
    return np.concatenate(flat, axis=1)


def select_proposals(
    anchors: np.ndarray,
    logits: np.ndarray,
    image_size: Tuple[int, int],
    top_k: int,
    nms_threshold: float = 0.7,
    min_size: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Clip anchors, drop slivers, suppress by logit and keep ``top_k``.

    Ordering uses the raw logits, so adding a constant to every logit does
    not change the selection.

    Returns
    -------
    Tuple[numpy.ndarray, numpy.ndarray]
        ``[K, 4]`` boxes and ``[K]`` sigmoid scores, best first.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.shape[0] != len(anchors):
        raise ShapeError(f"{logits.shape[0]} logits for {len(anchors)} anchors")
    boxes = clip_boxes(anchors, *image_size)
    valid = np.flatnonzero(((boxes[:, 2] - boxes[:, 0]) >= min_size) & ((boxes[:, 3] - boxes[:, 1]) >= min_size))
    keep = nms_indices(boxes[valid], logits[valid], nms_threshold)[:top_k]
    chosen = valid[keep]
    return boxes[chosen], expit(logits[chosen])


def propose(
    fused: "FeaturePyramid",
    rpn_head: Mapping[str, np.ndarray],
    spec: AnchorSpec,
    top_k: int,
    image_size: Optional[Tuple[int, int]] = None,
    nms_threshold: float = 0.7,
    slice_index: int = 0,
) -> List[RoiBox]:
    """Score every anchor of the first batch item and return the best ``top_k`` after NMS."""
    shapes = [tuple(level.shape[-2:]) for _, level in fused.levels]
    if image_size is None:
        height, width = shapes[0]
        image_size = (height * spec.strides[0], width * spec.strides[0])
    logits = objectness(fused, rpn_head)[0]
    boxes, scores = select_proposals(anchor_array(shapes, spec), logits, image_size, top_k, nms_threshold)
    return [RoiBox(*box, slice_index=slice_index, score=float(score)) for box, score in zip(boxes, scores)]
