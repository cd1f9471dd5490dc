"""From HU volumes to network input slabs."""

from .augment import AugmentPlan, apply_augment, augment, plan_augment
from .slab import Slab, assemble_slab, resample_slice, slab_boxes, to_2d
from .volume import Volume, read_pgm, read_volume, write_pgm, write_volume
from .window import WindowSpec, window_to_u8

__all__ = [
    "AugmentPlan",
    "Slab",
    "Volume",
    "WindowSpec",
    "apply_augment",
    "assemble_slab",
    "augment",
    "plan_augment",
    "read_pgm",
    "read_volume",
    "resample_slice",
    "slab_boxes",
    "to_2d",
    "window_to_u8",
    "write_pgm",
    "write_volume",
]
