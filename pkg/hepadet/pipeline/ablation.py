"""Train and evaluate each framework variant on one phantom split."""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from hepadet.config import RunConfig
from hepadet.constants import ABLATION_LABELS
from hepadet.detection.evaluate import EvalTable
from hepadet.errors import ConfigError, DivergenceError
from hepadet.phantoms.generator import PhaseVolumeSet
from hepadet.utils.logs import ResultsLogger

from .infer import evaluate_detector
from .train import train_detector

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Variant = Tuple[str, RunConfig]


def log_name(label: str) -> str:
    """File stem for a variant's training log, e.g. ``r-101_region_fusion``."""
    return label.lower().replace(" ", "_")


def ablation_configs(config: RunConfig) -> List[Variant]:
    """The six table rows, in order, as configs derived from ``config.variants``.

    Raises
    ------
    ConfigError
        If a row label has no variant entry.
    """
    missing = [label for label in ABLATION_LABELS if label not in config.variants]
    if missing:
        raise ConfigError(f"config has no variants for {missing}")
    return [(label, config.variant(label)) for label in ABLATION_LABELS]


def run_ablation(
    variants: Sequence[Variant],
    train: Sequence[PhaseVolumeSet],
    test: Sequence[PhaseVolumeSet],
    iou_threshold: float = 0.3,
    log_dir: Optional[PathLike] = None,
    deterministic: bool = False,
) -> EvalTable:
    """Train every variant from scratch and score it on ``test``.

    Variants run one after another. A variant whose loss diverges gets a
    failed row and the run moves on.

    Parameters
    ----------
    variants : sequence of (str, RunConfig)
        Row labels with their configs.
    train, test : sequence of PhaseVolumeSet
        The shared subject split.
    iou_threshold : float
        Printed in the table header.
    log_dir : str or Path, optional
        Where per-variant training logs go (``<label>.train.jsonl``).
    deterministic : bool
        Drop timestamps from the training logs.
    """
    table = EvalTable(iou_threshold)
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
    for label, config in variants:
        logger.info("Ablation row %s.", label)
        results = None
        if log_dir is not None:
            results = ResultsLogger(Path(log_dir) / f"{log_name(label)}.train.jsonl", deterministic)
        try:
            trained = train_detector(config, train, results)
        except DivergenceError as err:
            logger.warning("Row %s failed: %s", label, err)
            table.mark_failed(label, str(err))
            continue
        finally:
            if results is not None:
                results.close()
        accuracy, counts, _ = evaluate_detector(trained.detector, test)
        table.add_row(label, accuracy, counts)
    return table
