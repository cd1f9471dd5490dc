"""Phantom datasets on disk: volumes, ground truth and the manifest."""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

from hepadet.autodiff.rng import generator
from hepadet.constants import PHASES
from hepadet.errors import DatasetError
from hepadet.preprocess.volume import read_volume, write_volume

from .generator import GroundTruthLesion, PhantomSpec, PhaseVolumeSet, generate_phantom

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
T = TypeVar("T")

MANIFEST_NAME = "manifest.json"


def worker_count(default: int = 4) -> int:
    """Size of the per-subject worker pool, capped by ``HEPADET_THREADS``."""
    value = os.environ.get("HEPADET_THREADS")
    if not value:
        return default
    try:
        return max(int(value), 1)
    except ValueError:
        logger.warning("Ignoring non-integer HEPADET_THREADS=%r.", value)
        return default


def subject_name(index: int) -> str:
    return f"subject{index:03d}"


@dataclass
class SubjectEntry:
    subject_id: str
    volumes: Dict[str, str]
    ground_truth: str

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.subject_id, "volumes": dict(self.volumes), "gt": self.ground_truth}


@dataclass
class Manifest:
    """Index of a dataset directory; file names are relative to it."""

    root: Path
    subjects: List[SubjectEntry] = field(default_factory=list)
    seed: Optional[int] = None
    spec: Optional[Dict[str, Any]] = None

    @property
    def subject_ids(self) -> List[str]:
        return [entry.subject_id for entry in self.subjects]

    def entry(self, subject_id: str) -> SubjectEntry:
        for entry in self.subjects:
            if entry.subject_id == subject_id:
                return entry
        raise DatasetError(f"{subject_id} is not listed in {self.root / MANIFEST_NAME}")


def write_subject(phantom: PhaseVolumeSet, directory: PathLike) -> SubjectEntry:
    """Write the three phase volumes and ``<subject>.gt.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    volumes = {phase: write_volume(phantom.volumes[phase], directory).name for phase in PHASES}
    gt_path = directory / f"{phantom.subject_id}.gt.json"
    with open(gt_path, "w") as file:
        json.dump(
            {"subject_id": phantom.subject_id, "lesions": [lesion.to_dict() for lesion in phantom.lesions]},
            file,
            indent=2,
            sort_keys=True,
        )
    return SubjectEntry(phantom.subject_id, volumes, gt_path.name)


def write_manifest(
    directory: PathLike, entries: Sequence[SubjectEntry], seed: Optional[int] = None, spec: Optional[PhantomSpec] = None
) -> Path:
    path = Path(directory) / MANIFEST_NAME
    content = {
        "subjects": [entry.to_dict() for entry in entries],
        "seed": seed,
        "spec": spec.to_dict() if spec is not None else None,
    }
    with open(path, "w") as file:
        json.dump(content, file, indent=2, sort_keys=True)
    logger.info("Wrote manifest with %d subjects to %s.", len(entries), path)
    return path


def read_manifest(directory: PathLike) -> Manifest:
    """Parse ``manifest.json`` in ``directory``.

    Raises
    ------
    DatasetError
        If the manifest is missing, malformed, or lists files that do not exist.
    """
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"no manifest at {path}")
    try:
        with open(path) as file:
            content = json.load(file)
        entries = [
            SubjectEntry(str(item["id"]), {p: str(item["volumes"][p]) for p in PHASES}, str(item["gt"]))
            for item in content["subjects"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise DatasetError(f"malformed manifest {path}: {err}") from err
    for entry in entries:
        for name in list(entry.volumes.values()) + [entry.ground_truth]:
            if not (root / name).is_file():
                raise DatasetError(f"manifest {path} lists missing file {name}")
    return Manifest(root, entries, content.get("seed"), content.get("spec"))


def read_subject(manifest: Manifest, subject_id: str) -> PhaseVolumeSet:
    entry = manifest.entry(subject_id)
    volumes = {phase: read_volume(manifest.root / entry.volumes[phase]) for phase in PHASES}
    with open(manifest.root / entry.ground_truth) as file:
        content = json.load(file)
    lesions = [GroundTruthLesion.from_dict(item) for item in content["lesions"]]
    return PhaseVolumeSet(subject_id, volumes, lesions)


def read_subjects(manifest: Manifest, subject_ids: Optional[Sequence[str]] = None) -> List[PhaseVolumeSet]:
    ids = list(manifest.subject_ids if subject_ids is None else subject_ids)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda s: read_subject(manifest, s), ids))


def generate_dataset(spec: PhantomSpec, count: int, seed: int) -> List[PhaseVolumeSet]:
    """Render ``count`` subjects on the worker pool, in subject order."""
    if count < 0:
        raise ValueError(f"subject count must be non-negative, got {count}")
    names = [subject_name(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda name: generate_phantom(spec, seed, name), names))


def write_dataset(
    phantoms: Sequence[PhaseVolumeSet],
    directory: PathLike,
    seed: Optional[int] = None,
    spec: Optional[PhantomSpec] = None,
) -> Path:
    """Write every subject and the manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = [write_subject(phantom, directory) for phantom in phantoms]
    return write_manifest(directory, entries, seed, spec)


def split_dataset(phantoms: Sequence[T], train_fraction: float, seed: int) -> Tuple[List[T], List[T]]:
    """Subject-level train/test split.

    The train side gets ``round(train_fraction * n)`` subjects (halves round
    up); both sides keep the input order.

    Raises
    ------
    DatasetError
        If either side would be empty.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    count = len(phantoms)
    n_train = int(math.floor(train_fraction * count + 0.5))
    if n_train < 1 or n_train > count - 1:
        raise DatasetError(f"cannot split {count} subjects at fraction {train_fraction} into two non-empty sides")
    order = generator(seed, "split").permutation(count)
    train_idx = set(int(i) for i in order[:n_train])
    train = [p for i, p in enumerate(phantoms) if i in train_idx]
    test = [p for i, p in enumerate(phantoms) if i not in train_idx]
    return train, test
