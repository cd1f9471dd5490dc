"""Weight checkpoints: a JSON manifest next to a raw little-endian blob.

The manifest maps every array name to its shape and byte offset inside the
blob. Arrays are grouped in sections: ``parameters`` (trainable weights),
``buffers`` (batch-norm running statistics) and ``gate`` (texture gate). A
free-form ``metadata`` block carries the config snapshot and the epoch.
Importing a checkpoint into a freshly built graph is also how externally
trained weights are brought in.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from hepadet.errors import DatasetError

logger = logging.getLogger(__name__)

DTYPE = "<f8"
SECTIONS = ("parameters", "buffers", "gate")
PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    parameters: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    gate: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)


def blob_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name.replace(".json", "") + ".raw")


def save_checkpoint(
    path: PathLike,
    parameters: Mapping[str, np.ndarray],
    buffers: Optional[Mapping[str, np.ndarray]] = None,
    gate: Optional[Mapping[str, np.ndarray]] = None,
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write a checkpoint manifest to ``path`` and its blob alongside.

    Returns
    -------
    Path
        The manifest path.
    """
    path = Path(path)
    blob = blob_path(path)
    manifest: Dict[str, Any] = {"dtype": DTYPE, "blob": blob.name, "metadata": dict(metadata or {})}
    offset = 0
    chunks = []
    for section, arrays in zip(SECTIONS, (parameters, buffers or {}, gate or {})):
        entries = {}
        for name in sorted(arrays):
            data = np.asarray(arrays[name], dtype=np.float64).astype(DTYPE, order="C")
            entries[name] = {"shape": list(data.shape), "offset": offset}
            chunks.append(data.tobytes())
            offset += data.nbytes
        manifest[section] = entries
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(blob, "wb") as handle:
        for chunk in chunks:
            handle.write(chunk)
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info("Saved checkpoint with %d parameters to %s.", len(parameters), path)
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path) as handle:
        manifest = json.load(handle)
    if manifest.get("dtype") != DTYPE:
        raise DatasetError(f"checkpoint {path} has unsupported dtype {manifest.get('dtype')!r}")
    raw = (path.parent / manifest["blob"]).read_bytes()
    checkpoint = Checkpoint(metadata=manifest.get("metadata", {}))
    for section in SECTIONS:
        arrays = getattr(checkpoint, section)
        for name, entry in manifest.get(section, {}).items():
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            if entry["offset"] + 8 * count > len(raw):
                raise DatasetError(f"checkpoint blob too short for {section}/{name}")
            data = np.frombuffer(raw, dtype=DTYPE, count=count, offset=entry["offset"])
            arrays[name] = data.astype(np.float64).reshape(shape)
    logger.debug("Loaded checkpoint %s.", path)
    return checkpoint
