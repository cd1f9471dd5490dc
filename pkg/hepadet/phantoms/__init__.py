"""Synthetic multi-phase phantoms standing in for clinical scans."""

from .dataset import (
    Manifest,
    generate_dataset,
    read_manifest,
    read_subject,
    read_subjects,
    split_dataset,
    worker_count,
    write_dataset,
)
from .generator import GroundTruthLesion, PhantomSpec, PhaseVolumeSet, generate_phantom

__all__ = [
    "GroundTruthLesion",
    "Manifest",
    "PhantomSpec",
    "PhaseVolumeSet",
    "generate_dataset",
    "generate_phantom",
    "read_manifest",
    "read_subject",
    "read_subjects",
    "split_dataset",
    "worker_count",
    "write_dataset",
]
