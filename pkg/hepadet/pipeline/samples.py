"""Training and evaluation samples cut from phantom subjects."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from hepadet.config import RunConfig
from hepadet.detection.evaluate import GroundTruthBox
from hepadet.phantoms.dataset import worker_count
from hepadet.phantoms.generator import PhaseVolumeSet
from hepadet.preprocess.augment import AugmentPlan, apply_augment
from hepadet.preprocess.slab import Box, Slab, assemble_slab, slab_boxes

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    """Aligned slabs of one slice for the phases a model reads, with its lesions."""

    subject_id: str
    slice_index: int
    slabs: Dict[str, Slab]
    boxes: List[Box] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)

    def channels(self) -> Dict[str, np.ndarray]:
        return {phase: slab.channels for phase, slab in self.slabs.items()}

    def ground_truth(self) -> List[GroundTruthBox]:
        pairs = zip(self.boxes, self.labels)
        return [GroundTruthBox(*box, label=label, slice_index=self.slice_index) for box, label in pairs]

    def augmented(self, plan: AugmentPlan) -> "Sample":
        """Apply one plan to every phase so the slabs stay aligned."""
        slabs = {}
        boxes: List[Box] = list(self.boxes)
        for phase, slab in self.slabs.items():
            slabs[phase], boxes = apply_augment(slab, self.boxes, plan)
        keep = [i for i, (x0, y0, x1, y1) in enumerate(boxes) if x1 - x0 >= 1 and y1 - y0 >= 1]
        return Sample(
            self.subject_id,
            self.slice_index,
            slabs,
            [boxes[i] for i in keep],
            [self.labels[i] for i in keep],
        )


def build_sample(phantom: PhaseVolumeSet, slice_index: int, config: RunConfig, centred_only: bool = False) -> Sample:
    """Assemble the slabs of ``slice_index`` and map its lesion boxes onto them.

    With ``centred_only`` only lesions whose centre lies on the slice are
    listed, which is how every lesion is scored exactly once.
    """
    size = config.net.input_size
    slabs = {
        phase: assemble_slab(phantom.volumes[phase], slice_index, config.window, size)
        for phase in config.pipeline.phases
    }
    lesions = phantom.lesions_on_slice(slice_index)
    if centred_only:
        lesions = [lesion for lesion in lesions if lesion.center_slice == slice_index]
    source = phantom.shape[1:]
    boxes = slab_boxes([lesion.boxes[slice_index] for lesion in lesions], source, size)
    return Sample(phantom.subject_id, slice_index, slabs, boxes, [lesion.label for lesion in lesions])


def training_slices(phantom: PhaseVolumeSet, min_box: int, negatives: int) -> List[int]:
    """Slices showing a lesion box of at least ``min_box`` pixels, plus lesion-free slices nearest the middle."""
    chosen = set()
    for lesion in phantom.lesions:
        for index, (x0, y0, x1, y1) in lesion.boxes.items():
            if min(x1 - x0, y1 - y0) >= min_box:
                chosen.add(index)
    middle = phantom.shape[0] / 2
    free = sorted(phantom.lesion_free_slices(), key=lambda k: (abs(k - middle), k))
    chosen.update(free[:negatives])
    return sorted(chosen)


def evaluation_slices(phantom: PhaseVolumeSet) -> List[int]:
    """Each lesion's centre slice and one lesion-free slice."""
    chosen = {lesion.center_slice for lesion in phantom.lesions}
    middle = phantom.shape[0] / 2
    free = sorted(phantom.lesion_free_slices(), key=lambda k: (abs(k - middle), k))
    chosen.update(free[:1])
    return sorted(chosen)


def _collect(jobs: Sequence[Tuple[PhaseVolumeSet, int]], config: RunConfig, centred_only: bool) -> List[Sample]:
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda job: build_sample(job[0], job[1], config, centred_only), jobs))


def training_samples(phantoms: Sequence[PhaseVolumeSet], config: RunConfig) -> List[Sample]:
    jobs = [
        (phantom, index)
        for phantom in phantoms
        for index in training_slices(phantom, config.data.min_box, config.data.negatives_per_subject)
    ]
    samples = _collect(jobs, config, centred_only=False)
    logger.info("Assembled %d training samples from %d subjects.", len(samples), len(phantoms))
    return samples


def evaluation_samples(phantoms: Sequence[PhaseVolumeSet], config: RunConfig) -> List[Sample]:
    jobs = [(phantom, index) for phantom in phantoms for index in evaluation_slices(phantom)]
    return _collect(jobs, config, centred_only=True)
