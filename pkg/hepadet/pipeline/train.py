"""SGD training of a detector on phantom samples, plus checkpoint IO."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from hepadet.autodiff.checkpoint import load_checkpoint, save_checkpoint
from hepadet.autodiff.graph import backward
from hepadet.autodiff.optim import SGD
from hepadet.autodiff.rng import generator
from hepadet.config import RunConfig
from hepadet.constants import BACKGROUND
from hepadet.detection.anchors import label_anchors, sample_rois
from hepadet.detection.gate import FEATURE_SIZE, GateModel, crop_box, fit_gate, texture_features
from hepadet.errors import DatasetError, DivergenceError
from hepadet.models.heads import roi_rows
from hepadet.phantoms.generator import PhaseVolumeSet
from hepadet.preprocess.augment import plan_augment
from hepadet.utils.logs import ResultsLogger

from .detector import CLS_LOSS, GATE_LOSS, LOSS, RPN_LOSS, Detector
from .samples import Sample, training_samples

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class TrainResult:
    detector: Detector
    history: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")


def _derived_seed(seed: int, *keys) -> int:
    return int(generator(seed, *keys).integers(2 ** 31))


def make_batches(order: Sequence[int], size: int) -> List[List[int]]:
    """Chunks of ``size``; a trailing single sample joins the previous chunk."""
    batches = [list(order[i : i + size]) for i in range(0, len(order), size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    return batches


def batch_feeds(detector: Detector, batch: Sequence[Sample], rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Slabs, objectness targets and sampled classifier ROIs for one batch.

    A gated detector also gets the standardised texture features of the same
    ROIs, cropped from the reference phase, with lesion ROIs as targets.
    """
    pipeline = detector.pipeline
    feeds = detector.slab_feeds([sample.channels() for sample in batch])
    targets, rois, labels = [], [], []
    crops: List[np.ndarray] = []
    for index, sample in enumerate(batch):
        targets.append(label_anchors(detector.anchors, sample.boxes, rng, batch=pipeline.rpn_batch))
        boxes, roi_labels = sample_rois(
            detector.anchors, sample.boxes, sample.labels, detector.image_size, rng, count=pipeline.roi_count
        )
        rois.append(roi_rows(boxes, index))
        labels.append(roi_labels)
        if pipeline.use_gate:
            center = sample.slabs[detector.reference].center
            crops.extend(texture_features(crop_box(center, box)).vector() for box in boxes)
    feeds["rpn_targets"] = np.stack(targets)
    feeds["rois"] = np.concatenate(rois)
    feeds["roi_labels"] = np.concatenate(labels).astype(np.float64)
    if pipeline.use_gate:
        feeds["gate_features"] = detector.gate.standardise(np.reshape(crops, (-1, FEATURE_SIZE)))
        feeds["gate_targets"] = (feeds["roi_labels"] != BACKGROUND).astype(np.float64).reshape(-1, 1)
    return feeds


def fit_detector_gate(detector: Detector, samples: Sequence[Sample], config: RunConfig) -> GateModel:
    """Fit the texture gate on lesion and background crops of the reference phase.

    The fit fixes the feature standardisation and gives the starting weights
    of the gate term that SGD then trains along with the rest of the loss.
    """
    rng = generator(config.seed, "gate")
    features, labels = [], []
    for sample in samples:
        center = sample.slabs[detector.reference].center
        boxes, roi_labels = sample_rois(
            detector.anchors, sample.boxes, sample.labels, detector.image_size, rng, count=config.pipeline.roi_count
        )
        for box, label in zip(boxes, roi_labels):
            features.append(texture_features(crop_box(center, box)).vector())
            labels.append(int(label != BACKGROUND))
    gate = fit_gate(np.asarray(features), labels, l2=config.optimizer.gate_l2)
    logger.info("Fitted texture gate on %d crops (%d lesion).", len(labels), sum(labels))
    return gate


def train_detector(
    config: RunConfig,
    phantoms: Sequence[PhaseVolumeSet],
    results: Optional[ResultsLogger] = None,
) -> TrainResult:
    """Train a fresh detector on every training slice of ``phantoms``.

    Raises
    ------
    DatasetError
        If fewer than two samples can be cut from the subjects.
    DivergenceError
        If the loss stops being finite.
    """
    samples = training_samples(phantoms, config)
    if len(samples) < 2:
        raise DatasetError(f"need at least two training samples, got {len(samples)}")
    detector = Detector(config)
    terms = [LOSS, RPN_LOSS, CLS_LOSS]
    if config.pipeline.use_gate:
        detector.set_gate(fit_detector_gate(detector, samples, config))
        terms.append(GATE_LOSS)
    graph = detector.graph
    opt = config.optimizer
    sgd = SGD(graph, opt.lr, opt.momentum, opt.clip_norm)
    history = []
    for epoch in range(1, opt.epochs + 1):
        order = generator(config.seed, "shuffle", epoch).permutation(len(samples))
        totals = dict.fromkeys(terms + ["grad_norm"], 0.0)
        batches = make_batches([int(i) for i in order], opt.batch_size)
        for step, indices in enumerate(batches):
            batch = [samples[i] for i in indices]
            if config.pipeline.augment:
                plans = [plan_augment(_derived_seed(config.seed, "augment", epoch, i)) for i in indices]
                batch = [sample.augmented(plan) for sample, plan in zip(batch, plans)]
            feeds = batch_feeds(detector, batch, generator(config.seed, "targets", epoch, step))
            graph.run(feeds, targets=[LOSS], mode="train", seed=_derived_seed(config.seed, "step", epoch, step))
            loss = float(graph.value(LOSS))
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"{detector.variant_name}: loss became {loss} at epoch {epoch}, step {step} "
                    f"(subjects {sorted({s.subject_id for s in batch})})"
                )
            totals["grad_norm"] += sgd.step(backward(graph, LOSS))
            for key in terms:
                totals[key] += float(graph.value(key))
        record = {
            "epoch": epoch,
            "loss": totals[LOSS] / len(batches),
            "rpn_loss": totals[RPN_LOSS] / len(batches),
            "cls_loss": totals[CLS_LOSS] / len(batches),
            "grad_norm": totals["grad_norm"] / len(batches),
            "steps": len(batches),
            "variant": detector.variant_name,
        }
        if GATE_LOSS in totals:
            record["gate_loss"] = totals[GATE_LOSS] / len(batches)
        history.append(record)
        logger.info("Epoch %d/%d: loss %.5f over %d steps.", epoch, opt.epochs, record["loss"], len(batches))
        if results is not None:
            results.record(**record)
    detector.gate = detector.trained_gate()
    return TrainResult(detector, history)


def save_detector(result: TrainResult, path: PathLike) -> Path:
    detector = result.detector
    metadata = {
        "config": detector.config.to_dict(),
        "variant": detector.variant_name,
        "epochs": len(result.history),
        "final_loss": result.final_loss,
    }
    return save_checkpoint(
        path, detector.graph.get_weights(), detector.graph.buffers, detector.gate.to_arrays(), metadata
    )


def load_detector(path: PathLike, config: Optional[RunConfig] = None) -> Detector:
    """Rebuild a detector from a checkpoint, by default with the config it was trained with."""
    checkpoint = load_checkpoint(path)
    if config is None:
        config = RunConfig.from_dict(checkpoint.metadata["config"])
    detector = Detector(config)
    detector.graph.set_weights(checkpoint.parameters)
    detector.graph.buffers.update({name: value.copy() for name, value in checkpoint.buffers.items()})
    detector.set_gate(GateModel.from_arrays(checkpoint.gate))
    return detector
