"""Final detection selection, lesion matching and the per-class accuracy table."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from hepadet.constants import BACKGROUND, CLASS_NAMES, LESION_CLASSES, TABLE_COLUMNS
from hepadet.errors import ShapeError

from .boxes import RoiBox, iou_matrix, nms_indices

logger = logging.getLogger(__name__)

MATCHING_RULE = (
    "greedy one-to-one matching by descending detection score; a lesion counts as correct "
    "when matched at IoU >= {iou:.2f} by a detection of its class"
)
ACCURACY_DEFINITION = "accuracy = correctly detected and classified lesions / lesions of that class, in percent"
DATA_NOTE = (
    "values are computed on synthetic phantoms; published clinical accuracies cannot be "
    "reproduced because the clinical dataset is not public"
)


@dataclass
class Detection:
    """A box with a probability for each of cyst, hemangioma, hcc and background."""

    box: RoiBox
    class_probs: np.ndarray
    source_phase: str = ""

    def __post_init__(self) -> None:
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        if self.class_probs.shape != (len(CLASS_NAMES),):
            raise ShapeError(f"class_probs must have {len(CLASS_NAMES)} entries")
        if self.class_probs.min() < 0 or abs(self.class_probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"class_probs {self.class_probs} is not a probability vector")

    @property
    def label(self) -> int:
        return int(self.class_probs.argmax())

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.label]

    @property
    def score(self) -> float:
        return float(self.class_probs[self.label])

    def to_record(self) -> Dict[str, Any]:
        return {
            "slice": self.box.slice_index,
            "box": [round(float(c), 4) for c in self.box.coords],
            "class": self.class_name,
            "score": round(self.score, 6),
            "probs": [round(float(p), 6) for p in self.class_probs],
            "proposal_score": round(self.box.score, 6),
            "phase": self.source_phase,
        }


@dataclass(frozen=True)
class GroundTruthBox:
    x0: float
    y0: float
    x1: float
    y1: float
    label: int
    slice_index: int = 0

    @property
    def coords(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


def _by_slice(items) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = {}
    for index, item in enumerate(items):
        slice_index = item.box.slice_index if isinstance(item, Detection) else item.slice_index
        groups.setdefault(slice_index, []).append(index)
    return groups


def select_top(
    detections: Sequence[Detection], nms_threshold: float = 0.3, per_lesion: bool = False
) -> List[Detection]:
    """Drop background, suppress overlaps within each class and optionally keep one detection per lesion.

    Suppression works per slice. With ``per_lesion`` a class-agnostic pass
    keeps only the most probable detection of each overlapping cluster.
    """
    kept: List[Detection] = []
    lesions = [d for d in detections if d.label != BACKGROUND]
    for indices in _by_slice(lesions).values():
        group = [lesions[i] for i in indices]
        survivors = []
        for label in sorted({d.label for d in group}):
            same = [d for d in group if d.label == label]
            order = nms_indices([d.box for d in same], [d.score for d in same], nms_threshold)
            survivors.extend(same[i] for i in order)
        if per_lesion and survivors:
            order = nms_indices([d.box for d in survivors], [d.score for d in survivors], nms_threshold)
            survivors = [survivors[i] for i in order]
        kept.extend(survivors)
    kept.sort(key=lambda d: (-d.score, d.box.slice_index, d.box.coords))
    return kept


@dataclass
class EvalCounts:
    """Lesion-level tallies behind one table row."""

    total: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in LESION_CLASSES})
    correct: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in LESION_CLASSES})
    wrong_class: int = 0
    missed: int = 0
    false_positives: int = 0

    def merge(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(
            {k: self.total[k] + other.total[k] for k in LESION_CLASSES},
            {k: self.correct[k] + other.correct[k] for k in LESION_CLASSES},
            self.wrong_class + other.wrong_class,
            self.missed + other.missed,
            self.false_positives + other.false_positives,
        )

    @property
    def lesions(self) -> int:
        return sum(self.total.values())

    @property
    def recall(self) -> float:
        """Fraction of lesions detected with the correct class."""
        return sum(self.correct.values()) / self.lesions if self.lesions else 0.0

    @property
    def detection_recall(self) -> float:
        """Fraction of lesions matched by any detection, class ignored."""
        return (self.lesions - self.missed) / self.lesions if self.lesions else 0.0

    def accuracy(self) -> Dict[str, float]:
        """Per-class percentage to two decimals; NaN for absent classes."""
        return {
            name: round(100.0 * self.correct[name] / self.total[name], 2) if self.total[name] else math.nan
            for name in LESION_CLASSES
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": dict(self.total),
            "correct": dict(self.correct),
            "wrong_class": self.wrong_class,
            "missed": self.missed,
            "false_positives": self.false_positives,
            "recall": round(self.recall, 6),
            "detection_recall": round(self.detection_recall, 6),
        }


def match_and_score(
    preds: Sequence[Detection], gts: Sequence[GroundTruthBox], iou_threshold: float = 0.3
) -> Tuple[Dict[str, float], EvalCounts, List[int]]:
    """Match detections to lesions and tally per-class accuracy.

    Detections are visited by descending score (ties broken by slice and
    coordinates, so the input order does not matter). Each takes the
    unmatched lesion on its slice with the highest IoU at or above the
    threshold.

    Returns
    -------
    Tuple[Dict[str, float], EvalCounts, List[int]]
        The accuracy row, the counts, and the indices into ``preds`` of the
        unmatched (false-positive) detections.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    counts = EvalCounts()
    for gt in gts:
        counts.total[CLASS_NAMES[gt.label]] += 1
    order = sorted(
        range(len(preds)),
        key=lambda i: (-preds[i].score, preds[i].box.slice_index, preds[i].box.coords, preds[i].label),
    )
    gt_groups = _by_slice(gts)
    matched_by: Dict[int, int] = {}
    false_positives = []
    for index in order:
        pred = preds[index]
        candidates = [g for g in gt_groups.get(pred.box.slice_index, []) if g not in matched_by]
        if candidates:
            overlaps = iou_matrix([pred.box], [gts[g].coords for g in candidates])[0]
            best = int(np.argmax(overlaps))
            if overlaps[best] >= iou_threshold:
                matched_by[candidates[best]] = index
                continue
        false_positives.append(index)
    for g, gt in enumerate(gts):
        if g not in matched_by:
            counts.missed += 1
        elif preds[matched_by[g]].label == gt.label:
            counts.correct[CLASS_NAMES[gt.label]] += 1
        else:
            counts.wrong_class += 1
    counts.false_positives = len(false_positives)
    return counts.accuracy(), counts, sorted(false_positives)


def _format_cell(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.2f}"


class EvalTable:
    """Per-class accuracy rows, one per framework variant.

    Parameters
    ----------
    iou_threshold : float
        Threshold the rows were matched at, printed in the header.
    """

    def __init__(self, iou_threshold: float = 0.3) -> None:
        self.iou_threshold = iou_threshold
        self.rows: Dict[str, Dict[str, float]] = {}
        self.failed: Dict[str, str] = {}
        self.counts: Dict[str, Dict[str, Any]] = {}

    def add_row(self, label: str, accuracy: Mapping[str, float], counts: Optional[EvalCounts] = None) -> None:
        for name, value in accuracy.items():
            if not math.isnan(value) and not 0 <= value <= 100:
                raise ValueError(f"accuracy {value} for {name} outside [0, 100]")
        self.rows[label] = dict(accuracy)
        self.failed.pop(label, None)
        if counts is not None:
            self.counts[label] = counts.to_dict()

    def mark_failed(self, label: str, reason: str) -> None:
        self.rows[label] = {name: math.nan for name in LESION_CLASSES}
        self.failed[label] = reason

    @property
    def labels(self) -> List[str]:
        return list(self.rows)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_dict(self.rows, orient="index", columns=list(LESION_CLASSES))
        frame.columns = list(TABLE_COLUMNS)
        frame.index.name = "Framework"
        return frame

    def header(self) -> List[str]:
        return [
            ACCURACY_DEFINITION,
            MATCHING_RULE.format(iou=self.iou_threshold),
            DATA_NOTE,
        ]

    def to_text(self) -> str:
        frame = self.to_frame().apply(lambda column: column.map(_format_cell))
        for label in self.failed:
            frame.loc[label] = ["failed"] * len(TABLE_COLUMNS)
        body = frame.to_string()
        lines = [f"# {line}" for line in self.header()] + ["", body]
        for label, reason in self.failed.items():
            lines.append(f"{label}: failed ({reason})")
        return "\n".join(lines) + "\n"

    def to_json(self) -> Dict[str, Any]:
        def clean(value: float) -> Optional[float]:
            return None if math.isnan(value) else value

        return {
            "header": self.header(),
            "iou_threshold": self.iou_threshold,
            "columns": list(TABLE_COLUMNS),
            "rows": [
                {"label": label, "accuracy": {k: clean(v) for k, v in row.items()}, "failed": self.failed.get(label)}
                for label, row in self.rows.items()
            ],
            "counts": self.counts,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "EvalTable":
        table = cls(data["iou_threshold"])
        for row in data["rows"]:
            if row.get("failed"):
                table.mark_failed(row["label"], row["failed"])
            else:
                accuracy = {k: math.nan if v is None else v for k, v in row["accuracy"].items()}
                table.rows[row["label"]] = accuracy
        table.counts = dict(data.get("counts", {}))
        return table

    def write(self, directory: Union[str, Path], stem: str = "eval") -> Tuple[Path, Path]:
        """Write ``<stem>.txt`` and ``<stem>.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        text_path, json_path = directory / f"{stem}.txt", directory / f"{stem}.json"
        text_path.write_text(self.to_text())
        with open(json_path, "w") as file:
            json.dump(self.to_json(), file, indent=2, sort_keys=True)
        return text_path, json_path
