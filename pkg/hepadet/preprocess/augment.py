"""Seeded slab augmentation: horizontal flip, isotropic scale, intensity shift."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from hepadet.autodiff.rng import generator

from .slab import Box, Slab

logger = logging.getLogger(__name__)

SCALE_RANGE = (0.8, 1.2)
SHIFT_RANGE = (-0.05, 0.05)
FIRE_PROBABILITY = 0.5


@dataclass(frozen=True)
class AugmentPlan:
    """Which transforms fire; ``None`` means the transform is skipped."""

    flip: bool = False
    scale: Optional[float] = None
    shift: Optional[float] = None

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.scale is None and self.shift is None


def plan_augment(seed: int) -> AugmentPlan:
    """Draw an augmentation plan; each transform fires with probability 0.5."""
    rng = generator(seed, "augment")
    fire = rng.random(3) < FIRE_PROBABILITY
    scale = rng.uniform(*SCALE_RANGE)
    shift = rng.uniform(*SHIFT_RANGE)
    return AugmentPlan(
        flip=bool(fire[0]),
        scale=float(scale) if fire[1] else None,
        shift=float(shift) if fire[2] else None,
    )


def flip_boxes(boxes: Sequence[Box], width: float) -> List[Box]:
    return [(width - x1, y0, width - x0, y1) for x0, y0, x1, y1 in boxes]


def scale_boxes(boxes: Sequence[Box], scale: float, size: Tuple[int, int]) -> List[Box]:
    """Zoom boxes about the image centre and clip them to the image."""
    rows, cols = size
    cy, cx = rows / 2, cols / 2
    scaled = []
    for x0, y0, x1, y1 in boxes:
        scaled.append(
            (
                float(np.clip(cx + scale * (x0 - cx), 0, cols)),
                float(np.clip(cy + scale * (y0 - cy), 0, rows)),
                float(np.clip(cx + scale * (x1 - cx), 0, cols)),
                float(np.clip(cy + scale * (y1 - cy), 0, rows)),
            )
        )
    return scaled


def scale_image(channels: np.ndarray, scale: float) -> np.ndarray:
    """Zoom ``[C, H, W]`` channels about the image centre.

    Pixel ``k`` covers ``[k, k + 1)``; output pixel centre ``u`` samples the
    input at ``c + (u - c) / scale`` with ``c`` the image centre.
    """
    _, rows, cols = channels.shape
    matrix = np.array([1.0, 1.0 / scale, 1.0 / scale])
    offset = np.array(
        [
            0.0,
            (0.5 - rows / 2) / scale + rows / 2 - 0.5,
            (0.5 - cols / 2) / scale + cols / 2 - 0.5,
        ]
    )
    return ndimage.affine_transform(channels, matrix, offset=offset, order=1, mode="nearest")


def apply_augment(slab: Slab, boxes: Sequence[Box], plan: AugmentPlan) -> Tuple[Slab, List[Box]]:
    """Apply ``plan`` to the slab pixels and its boxes consistently."""
    channels = slab.channels
    boxes = [tuple(map(float, box)) for box in boxes]
    rows, cols = slab.size
    if plan.flip:
        channels = channels[:, :, ::-1]
        boxes = flip_boxes(boxes, cols)
    if plan.scale is not None:
        channels = scale_image(channels, plan.scale)
        boxes = scale_boxes(boxes, plan.scale, (rows, cols))
    if plan.shift is not None:
        channels = channels + plan.shift
    channels = np.clip(np.ascontiguousarray(channels), 0.0, 1.0)
    return Slab(channels, slab.center_index, slab.subject_id, slab.phase), boxes


def augment(slab: Slab, gt_boxes: Sequence[Box], seed: int) -> Tuple[Slab, List[Box]]:
    """Draw a plan from ``seed`` and apply it."""
    plan = plan_augment(seed)
    logger.debug("Augment plan for seed %d: %s.", seed, plan)
    return apply_augment(slab, gt_boxes, plan)
