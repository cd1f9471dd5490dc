"""CT volumes and their on-disk formats.

A volume is stored as ``<name>.vol.json`` (dims, spacing, phase, subject id,
dtype) next to ``<name>.vol.raw`` holding little-endian signed 16-bit voxels
in z-major order. Single 8-bit slices are written as binary PGM (P5).
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from hepadet.constants import HU_MAX, HU_MIN, PHASES
from hepadet.errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
RAW_DTYPE = "<i2"


@dataclass
class Volume:
    """One contrast phase of one subject.

    Parameters
    ----------
    voxels : numpy.ndarray
        ``D x H x W`` grid of HU values.
    spacing : Tuple[float, float, float]
        ``(sz, sy, sx)`` in millimetres.
    phase : str
        One of ``non_contrast``, ``arterial`` or ``delayed``.
    subject_id : str
        Opaque identifier.
    """

    voxels: np.ndarray
    spacing: Tuple[float, float, float]
    phase: str
    subject_id: str

    def __post_init__(self) -> None:
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ShapeError(f"volume must be a non-empty 3-d grid, got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.voxels.min() < HU_MIN or self.voxels.max() > HU_MAX:
            raise ValueError(f"HU values must lie in [{HU_MIN}, {HU_MAX}]")
        self.voxels = self.voxels.astype(np.int16)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.voxels.shape

    @property
    def name(self) -> str:
        return f"{self.subject_id}_{self.phase}"


def write_volume(volume: Volume, directory: PathLike) -> Path:
    """Write ``volume`` into ``directory``; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sidecar = directory / f"{volume.name}.vol.json"
    raw = directory / f"{volume.name}.vol.raw"
    header = {
        "dims": list(volume.shape),
        "spacing": list(volume.spacing),
        "phase": volume.phase,
        "subject_id": volume.subject_id,
        "dtype": "i16le",
    }
    raw.write_bytes(volume.voxels.astype(RAW_DTYPE).tobytes())
    with open(sidecar, "w") as file:
        json.dump(header, file, indent=2, sort_keys=True)
    logger.debug("Wrote volume %s.", sidecar)
    return sidecar


def read_volume(path: PathLike) -> Volume:
    """Read a volume from its ``.vol.json`` sidecar."""
    path = Path(path)
    with open(path) as file:
        header = json.load(file)
    if header.get("dtype") != "i16le":
        raise DatasetError(f"{path}: unsupported voxel dtype {header.get('dtype')!r}")
    raw = path.with_name(path.name[: -len(".json")] + ".raw")
    dims = tuple(int(d) for d in header["dims"])
    data = np.frombuffer(raw.read_bytes(), dtype=RAW_DTYPE)
    if data.size != int(np.prod(dims)):
        raise DatasetError(f"{raw}: expected {int(np.prod(dims))} voxels, found {data.size}")
    return Volume(
        voxels=data.reshape(dims).astype(np.int16),
        spacing=tuple(header["spacing"]),
        phase=header["phase"],
        subject_id=header["subject_id"],
    )


def write_pgm(image: np.ndarray, path: PathLike) -> Path:
    """Write an 8-bit grayscale (or an ``H x W x 3`` image as P6) file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"PGM export needs uint8 pixels, got {image.dtype}")
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ShapeError(f"cannot write image of shape {image.shape}")
    height, width = image.shape[:2]
    with open(path, "wb") as file:
        file.write(magic + b"\n%d %d\n255\n" % (width, height))
        file.write(np.ascontiguousarray(image).tobytes())
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary P5 (or P6) file written by :func:`write_pgm`."""
    content = Path(path).read_bytes()
    tokens = []
    position = 0
    while len(tokens) < 4:
        while content[position : position + 1].isspace():
            position += 1
        if content[position : position + 1] == b"#":
            position = content.index(b"\n", position) + 1
            continue
        start = position
        while not content[position : position + 1].isspace():
            position += 1
        tokens.append(content[start:position])
    position += 1
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DatasetError(f"{path}: only 8-bit binary PGM/PPM is supported")
    shape = (height, width) if magic == b"P5" else (height, width, 3)
    data = np.frombuffer(content, dtype=np.uint8, count=int(np.prod(shape)), offset=position)
    return data.reshape(shape).copy()
