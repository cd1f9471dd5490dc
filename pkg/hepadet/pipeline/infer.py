"""Inference on slices: proposals, gate, classification and final selection."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hepadet.detection.boxes import RoiBox, iou_matrix
from hepadet.detection.evaluate import Detection, EvalCounts, match_and_score, select_top
from hepadet.detection.gate import texture_gate
from hepadet.detection.proposal import propose
from hepadet.models.backbone import LEVELS
from hepadet.models.heads import classify_rois
from hepadet.phantoms.generator import PhaseVolumeSet
from hepadet.preprocess.volume import write_pgm
from hepadet.utils.logs import ResultsLogger

from .detector import Detector
from .overlay import render_overlay
from .samples import Sample, build_sample, evaluation_samples, evaluation_slices

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class SliceResult:
    sample: Sample
    proposals: List[RoiBox] = field(default_factory=list)
    gated: List[RoiBox] = field(default_factory=list)
    detections: List[Detection] = field(default_factory=list)


def detect(detector: Detector, sample: Sample) -> SliceResult:
    """Run one slice through the trained pipeline.

    Proposals come from the merged pyramid, the texture gate drops the ones
    it scores normal, and the survivors are classified and reduced by
    :func:`select_top`. Detections below the configured score are dropped.
    """
    config = detector.config
    pipeline = config.pipeline
    detector.graph.run(detector.slab_feeds([sample.channels()]), targets=detector.level_labels, mode="infer")
    fused = detector.fused_pyramid(0)
    heads = detector.head_weights()
    proposals = propose(
        fused,
        heads,
        config.anchors,
        pipeline.top_k,
        image_size=detector.image_size,
        nms_threshold=pipeline.proposal_nms,
        slice_index=sample.slice_index,
    )
    if pipeline.use_gate:
        slab = sample.slabs[detector.reference]
        gated = [
            roi
            for roi in proposals
            if texture_gate(slab, roi, detector.gate, pipeline.gate_threshold).label == "abnormal"
        ]
    else:
        gated = list(proposals)
    detections: List[Detection] = []
    if gated:
        detections = classify_rois(
            fused[LEVELS[0]], gated, heads, pipeline.pool, stride=detector.roi_stride, source_phase=detector.reference
        )
    final = select_top(detections, config.thresholds.final_nms, pipeline.per_lesion)
    final = [d for d in final if d.score >= config.thresholds.score]
    logger.debug(
        "%s slice %d: %d proposals, %d gated, %d detections.",
        sample.subject_id,
        sample.slice_index,
        len(proposals),
        len(gated),
        len(final),
    )
    return SliceResult(sample, proposals, gated, final)


def evaluate_detector(
    detector: Detector, phantoms: Sequence[PhaseVolumeSet]
) -> Tuple[Dict[str, float], EvalCounts, List[SliceResult]]:
    """Score every lesion once, at its centre slice, plus one lesion-free slice per subject."""
    iou_threshold = detector.config.thresholds.eval_iou
    counts = EvalCounts()
    results = []
    for sample in evaluation_samples(phantoms, detector.config):
        result = detect(detector, sample)
        _, slice_counts, _ = match_and_score(result.detections, sample.ground_truth(), iou_threshold)
        counts = counts.merge(slice_counts)
        results.append(result)
    logger.info(
        "Evaluated %d lesions: recall %.3f, %d false positives.", counts.lesions, counts.recall, counts.false_positives
    )
    return counts.accuracy(), counts, results


def false_positive_indices(result: SliceResult, iou_threshold: float) -> List[int]:
    """Detections overlapping no lesion visible on the slice."""
    if not result.detections:
        return []
    gts = result.sample.ground_truth()
    if not gts:
        return list(range(len(result.detections)))
    overlaps = iou_matrix([d.box for d in result.detections], [g.coords for g in gts])
    return [int(i) for i in np.flatnonzero(overlaps.max(axis=1) < iou_threshold)]


def infer_subjects(
    detector: Detector,
    phantoms: Sequence[PhaseVolumeSet],
    out_dir: PathLike,
    deterministic: bool = False,
    all_slices: bool = False,
    overlay_factor: int = 4,
) -> int:
    """Write detections, proposals, overlays and the false-positive gallery.

    Returns
    -------
    int
        The number of detections written.
    """
    out_dir = Path(out_dir)
    overlays = out_dir / "overlays"
    gallery = out_dir / "false_positives"
    out_dir.mkdir(parents=True, exist_ok=True)
    iou_threshold = detector.config.thresholds.eval_iou
    total = 0
    det_log = ResultsLogger(out_dir / "detections.jsonl", deterministic)
    prop_log = ResultsLogger(out_dir / "proposals.jsonl", deterministic, name="proposals")
    with det_log, prop_log:
        for phantom in phantoms:
            slices = range(phantom.shape[0]) if all_slices else evaluation_slices(phantom)
            for index in slices:
                result = detect(detector, build_sample(phantom, index, detector.config))
                for roi in result.proposals:
                    prop_log.record(
                        subject=phantom.subject_id,
                        phase=detector.reference,
                        slice=index,
                        box=[round(float(c), 4) for c in roi.coords],
                        score=round(roi.score, 6),
                    )
                for detection in result.detections:
                    det_log.record(subject=phantom.subject_id, **detection.to_record())
                total += len(result.detections)
                gts = result.sample.ground_truth()
                if not result.detections and not gts:
                    continue
                image = np.rint(result.sample.slabs[detector.reference].center * 255).astype(np.uint8)
                stem = f"{phantom.subject_id}_s{index:03d}"
                write_pgm(render_overlay(image, result.detections, gts, overlay_factor), overlays / f"{stem}.pgm")
                for k in false_positive_indices(result, iou_threshold):
                    fp = render_overlay(image, [result.detections[k]], gts, overlay_factor)
                    write_pgm(fp, gallery / f"{stem}_fp{k}.pgm")
    logger.info("Wrote %d detections for %d subjects to %s.", total, len(phantoms), out_dir)
    return total


def predicted_class_mass(results: Sequence[SliceResult], detector: Detector) -> Optional[float]:
    """Mean probability the classifier puts on the true class of each lesion box."""
    masses = []
    heads = detector.head_weights()
    for result in results:
        boxes = [RoiBox(*gt.coords) for gt in result.sample.ground_truth()]
        if not boxes:
            continue
        detector.graph.run(detector.slab_feeds([result.sample.channels()]), targets=detector.level_labels, mode="infer")
        fused = detector.fused_pyramid(0)
        detections = classify_rois(fused[LEVELS[0]], boxes, heads, detector.pipeline.pool, detector.roi_stride)
        masses.extend(d.class_probs[label] for d, label in zip(detections, result.sample.labels))
    return float(np.mean(masses)) if masses else None
