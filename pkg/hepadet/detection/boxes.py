"""Axis-aligned boxes, IoU and greedy non-maximum suppression."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from hepadet.errors import RoiError


@dataclass(frozen=True)
class RoiBox:
    """A box on the slab plane in pixel coordinates, with its slice and score."""

    x0: float
    y0: float
    x1: float
    y1: float
    slice_index: int = 0
    score: float = 0.0

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise RoiError(f"box ({self.x0}, {self.y0}, {self.x1}, {self.y1}) has no area")
        if not 0.0 <= self.score <= 1.0:
            raise RoiError(f"box score {self.score} outside [0, 1]")

    @property
    def coords(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def as_boxes(boxes) -> np.ndarray:
    """``[n, 4]`` float array from RoiBoxes or coordinate rows."""
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64).reshape(-1, 4)
    rows = [box.coords if isinstance(box, RoiBox) else tuple(box) for box in boxes]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between the rows of ``a`` ``[n, 4]`` and ``b`` ``[m, 4]``."""
    a, b = as_boxes(a), as_boxes(b)
    width = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    height = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(width, 0, None) * np.clip(height, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    return float(iou_matrix([a], [b])[0, 0])


def nms_indices(boxes, scores: Sequence[float], iou_threshold: float) -> List[int]:
    """Greedy NMS returning kept indices, highest score first.

    Boxes are visited by descending score, ties by lower index. A box is
    dropped when its IoU with any already kept box exceeds ``iou_threshold``.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    boxes = as_boxes(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    suppressed = np.zeros(len(scores), dtype=bool)
    keep = []
    for index in order:
        if suppressed[index]:
            continue
        keep.append(int(index))
        # One row of IoU per kept box; memory stays linear in the box count.
        suppressed |= iou_matrix(boxes[index : index + 1], boxes)[0] > iou_threshold
    return keep


def nms(boxes: Sequence[RoiBox], iou_threshold: float) -> List[RoiBox]:
    """Greedy NMS over RoiBoxes by their scores."""
    keep = nms_indices(boxes, [box.score for box in boxes], iou_threshold)
    return [boxes[index] for index in keep]


def clip_boxes(boxes, height: float, width: float) -> np.ndarray:
    """Clip ``[n, 4]`` boxes to the image rectangle."""
    boxes = as_boxes(boxes).copy()
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, width)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, height)
    return boxes
