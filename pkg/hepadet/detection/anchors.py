"""Anchor tiling, anchor labelling and classifier ROI sampling."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from hepadet.constants import BACKGROUND
from hepadet.errors import ConfigError, ShapeError
from hepadet.utils.config import from_dict, to_dict

from .boxes import RoiBox, as_boxes, clip_boxes, iou_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor sizes in pixels, aspect ratios (height / width) and level strides."""

    scales: Tuple[float, ...] = (8, 16, 32, 64)
    ratios: Tuple[float, ...] = (0.5, 1, 2)
    strides: Tuple[int, ...] = (4, 8, 16, 32)

    def __post_init__(self) -> None:
        if not self.scales or not self.ratios or not self.strides:
            raise ConfigError("anchor scales, ratios and strides must be non-empty")
        if min(self.scales) <= 0 or min(self.ratios) <= 0 or min(self.strides) <= 0:
            raise ConfigError("anchor scales, ratios and strides must be positive")

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AnchorSpec":
        return from_dict(cls, data, "anchors")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


def cell_templates(spec: AnchorSpec) -> np.ndarray:
    """``[scales * ratios, 4]`` offsets around a cell centre, scale-major."""
    rows = []
    for scale in spec.scales:
        for ratio in spec.ratios:
            half_w = scale / np.sqrt(ratio) / 2
            half_h = scale * np.sqrt(ratio) / 2
            rows.append((-half_w, -half_h, half_w, half_h))
    return np.asarray(rows)


def anchor_array(level_shapes: Sequence[Tuple[int, int]], spec: AnchorSpec) -> np.ndarray:
    """All anchors as a ``[A, 4]`` array.

    Order: level, then cell row, cell column, scale, ratio. This matches the
    flattening of the objectness logits.
    """
    if len(level_shapes) != len(spec.strides):
        raise ShapeError(f"{len(level_shapes)} levels but {len(spec.strides)} strides")
    templates = cell_templates(spec)
    levels = []
    for (height, width), stride in zip(level_shapes, spec.strides):
        cy = (np.arange(height) + 0.5) * stride
        cx = (np.arange(width) + 0.5) * stride
        yy, xx = np.meshgrid(cy, cx, indexing="ij")
        centres = np.stack([xx, yy, xx, yy], axis=-1).reshape(-1, 1, 4)
        levels.append((centres + templates[None]).reshape(-1, 4))
    return np.concatenate(levels) if levels else np.zeros((0, 4))


def gen_anchors(level_shapes: Sequence[Tuple[int, int]], spec: AnchorSpec) -> List[RoiBox]:
    """One box per (cell, scale, ratio) centred on the cell centre."""
    return [RoiBox(*row) for row in anchor_array(level_shapes, spec)]


def anchor_count(level_shapes: Sequence[Tuple[int, int]], spec: AnchorSpec) -> int:
    return sum(h * w for h, w in level_shapes) * spec.per_cell


def label_anchors(
    anchors: np.ndarray,
    gt_boxes,
    rng: np.random.Generator,
    positive_iou: float = 0.5,
    negative_iou: float = 0.3,
    batch: int = 64,
    positive_fraction: float = 0.5,
) -> np.ndarray:
    """Objectness targets: 1 positive, 0 negative, -1 ignored.

    An anchor is positive at IoU >= ``positive_iou`` with some lesion, and
    the best anchor of every lesion is positive as well; it is negative
    below ``negative_iou``. Positives and negatives are then subsampled to
    at most ``batch`` labelled anchors.
    """
    gt = as_boxes(gt_boxes)
    targets = np.full(len(anchors), -1.0)
    if len(gt):
        overlaps = iou_matrix(anchors, gt)
        best = overlaps.max(axis=1)
        targets[best < negative_iou] = 0.0
        targets[best >= positive_iou] = 1.0
        for column in range(overlaps.shape[1]):
            top = int(overlaps[:, column].argmax())
            if overlaps[top, column] > 0:
                targets[top] = 1.0
    else:
        targets[:] = 0.0

    positives = np.flatnonzero(targets == 1.0)
    limit = int(batch * positive_fraction)
    if len(positives) > limit:
        targets[rng.choice(positives, len(positives) - limit, replace=False)] = -1.0
    negatives = np.flatnonzero(targets == 0.0)
    room = batch - int((targets == 1.0).sum())
    if len(negatives) > room:
        targets[rng.choice(negatives, len(negatives) - room, replace=False)] = -1.0
    return targets


def sample_rois(
    anchors: np.ndarray,
    gt_boxes,
    gt_labels: Sequence[int],
    image_size: Tuple[int, int],
    rng: np.random.Generator,
    count: int = 16,
    foreground_iou: float = 0.5,
    background_iou: float = 0.3,
    foreground_fraction: float = 0.5,
) -> Tuple[np.ndarray, np.ndarray]:
    """ROIs and class labels for training the classifier.

    Candidates are the lesion boxes themselves plus clipped anchors; an
    anchor takes the class of its best lesion at IoU >= ``foreground_iou``
    and the background class below ``background_iou``.

    Returns
    -------
    Tuple[numpy.ndarray, numpy.ndarray]
        ``[R, 4]`` boxes and ``[R]`` integer labels.
    """
    height, width = image_size
    gt = as_boxes(gt_boxes)
    labels_gt = np.asarray(gt_labels, dtype=np.int64)
    candidates = clip_boxes(anchors, height, width)
    valid = ((candidates[:, 2] - candidates[:, 0]) >= 1) & ((candidates[:, 3] - candidates[:, 1]) >= 1)
    candidates = candidates[valid]
    if len(gt):
        overlaps = iou_matrix(candidates, gt)
        best = overlaps.max(axis=1)
        owner = overlaps.argmax(axis=1)
        foreground = np.flatnonzero(best >= foreground_iou)
        background = np.flatnonzero(best < background_iou)
    else:
        foreground = np.zeros(0, dtype=np.int64)
        background = np.arange(len(candidates))

    fg_room = max(int(count * foreground_fraction) - len(gt), 0)
    if len(foreground) > fg_room:
        foreground = np.sort(rng.choice(foreground, fg_room, replace=False))
    bg_room = count - len(gt) - len(foreground)
    if len(background) > bg_room:
        background = np.sort(rng.choice(background, max(bg_room, 0), replace=False))

    boxes = [clip_boxes(gt, height, width), candidates[foreground], candidates[background]]
    matched = labels_gt[owner[foreground]] if len(gt) else labels_gt[:0]
    labels = [labels_gt, matched, np.full(len(background), BACKGROUND)]
    return np.concatenate(boxes).reshape(-1, 4), np.concatenate(labels).astype(np.int64)
