"""Resampling and 2.5D slab assembly."""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from hepadet.constants import SLAB_DEPTH
from hepadet.errors import ShapeError

from .volume import Volume
from .window import WindowSpec, window_to_u8

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]


@dataclass
class Slab:
    """Nine adjacent slices, windowed and scaled to ``[0, 1]``.

    Parameters
    ----------
    channels : numpy.ndarray
        ``9 x S x S`` array.
    center_index : int
        Slice index of the middle channel in the source volume.
    subject_id, phase : str
        Where the slab came from.
    """

    channels: np.ndarray
    center_index: int
    subject_id: str = ""
    phase: str = ""

    def __post_init__(self) -> None:
        if self.channels.ndim != 3 or self.channels.shape[0] != SLAB_DEPTH:
            raise ShapeError(f"a slab has {SLAB_DEPTH} channels, got shape {self.channels.shape}")

    @property
    def size(self) -> Tuple[int, int]:
        return self.channels.shape[1], self.channels.shape[2]

    @property
    def center(self) -> np.ndarray:
        return self.channels[SLAB_DEPTH // 2]


def _target(target: Union[int, Sequence[int]]) -> Tuple[int, int]:
    if isinstance(target, (int, np.integer)):
        return int(target), int(target)
    return int(target[0]), int(target[1])


def resample_slice(image: np.ndarray, target: Union[int, Sequence[int]]) -> np.ndarray:
    """Bilinear resampling with corner-aligned sample positions.

    The first and last output rows/columns sample the first and last input
    rows/columns exactly, so resampling to the source shape is the identity.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 2:
        raise ShapeError(f"resampling needs a 2-d slice of at least 2x2, got {image.shape}")
    rows, cols = _target(target)
    grid = np.meshgrid(
        np.linspace(0, image.shape[0] - 1, rows),
        np.linspace(0, image.shape[1] - 1, cols),
        indexing="ij",
    )
    return ndimage.map_coordinates(image, grid, order=1, mode="nearest")


def slab_indices(center: int, depth: int) -> np.ndarray:
    """Source slice of each slab channel, replicating the boundary slices."""
    half = SLAB_DEPTH // 2
    return np.clip(np.arange(center - half, center + half + 1), 0, depth - 1)


def assemble_slab(
    volume: Volume,
    center: int,
    window: WindowSpec = WindowSpec(),
    target: Union[int, Sequence[int]] = 64,
) -> Slab:
    """Build the slab centred on slice ``center`` of ``volume``.

    Parameters
    ----------
    volume : Volume
        Source volume.
    center : int
        Index of the middle slice, in ``[0, D)``.
    window : WindowSpec
        HU window applied before scaling to ``[0, 1]``.
    target : int or (int, int)
        In-plane output size.

    Returns
    -------
    Slab
    """
    depth = volume.shape[0]
    if not 0 <= center < depth:
        raise IndexError(f"centre slice {center} outside volume of depth {depth}")
    size = _target(target)
    channels = []
    for index in slab_indices(center, depth):
        unit = window_to_u8(volume.voxels[index], window) / 255.0
        if unit.shape != size:
            unit = np.clip(resample_slice(unit, size), 0.0, 1.0)
        channels.append(unit)
    return Slab(np.stack(channels), center, volume.subject_id, volume.phase)


def slab_boxes(boxes: Sequence[Box], source_shape: Tuple[int, int], target: Union[int, Sequence[int]]) -> List[Box]:
    """Scale ``(x0, y0, x1, y1)`` boxes from slice pixels to slab pixels."""
    rows, cols = _target(target)
    sy, sx = rows / source_shape[0], cols / source_shape[1]
    return [(x0 * sx, y0 * sy, x1 * sx, y1 * sy) for x0, y0, x1, y1 in boxes]


def to_2d(channels: np.ndarray) -> np.ndarray:
    """Keep only the centre slice of ``[..., 9, H, W]`` slab channels."""
    half = SLAB_DEPTH // 2
    return channels[..., half : half + 1, :, :]
