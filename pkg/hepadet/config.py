"""Run configuration: one JSON document, one typed section per concern.

A run config looks like::

    {
        "seed": 7,
        "net": {"depth": 50, "width_scale": "1/8", "input_size": 64, ...},
        "anchors": {...}, "relation": {...}, "window": {...},
        "phantom": {...}, "pipeline": {...}, "thresholds": {...},
        "optimizer": {...}, "data": {...},
        "variants": {"R-50": {"net.depth": 50, ...}, ...}
    }

Every section is optional except ``seed``. Command-line assignments of the
form ``section.key=value`` are applied to the raw document before it is
parsed, so they win over the file.
"""

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from hepadet.constants import PHASES, SLAB_DEPTH
from hepadet.detection.anchors import AnchorSpec
from hepadet.errors import ConfigError
from hepadet.models.backbone import NetConfig
from hepadet.models.relation import RelationSpec
from hepadet.phantoms.generator import PhantomSpec
from hepadet.preprocess.window import WindowSpec
from hepadet.utils.config import from_dict, to_dict

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SNAPSHOT_NAME = "config.snapshot.json"
INPUT_MODES = ("2.5d", "2d")


@dataclass(frozen=True)
class PipelineConfig:
    """Which framework variant to build and how the stages are sized.

    Parameters
    ----------
    input_mode : str
        ``2.5d`` feeds the nine-slice slab, ``2d`` only its centre slice.
    fusion : bool
        Top-down pyramid fusion; without it every level keeps only its lateral.
    multimodal : bool
        Run one backbone per phase and merge them with the relation operator.
    phase : str
        Phase fed to the single-phase variants.
    """

    input_mode: str = "2.5d"
    fusion: bool = True
    multimodal: bool = False
    phase: str = "arterial"
    fused_channels: int = 32
    pool: int = 4
    hidden: int = 64
    dropout: float = 0.5
    top_k: int = 32
    proposal_nms: float = 0.7
    use_gate: bool = True
    gate_threshold: float = 0.5
    per_lesion: bool = True
    rpn_batch: int = 64
    roi_count: int = 16
    augment: bool = True

    def __post_init__(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if min(self.fused_channels, self.pool, self.hidden, self.top_k, self.rpn_batch, self.roi_count) < 1:
            raise ConfigError("pipeline sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 < self.proposal_nms <= 1:
            raise ConfigError(f"proposal_nms must lie in (0, 1], got {self.proposal_nms}")

    @property
    def input_depth(self) -> int:
        return SLAB_DEPTH if self.input_mode == "2.5d" else 1

    @property
    def phases(self) -> Tuple[str, ...]:
        return PHASES if self.multimodal else (self.phase,)


@dataclass(frozen=True)
class Thresholds:
    eval_iou: float = 0.3
    final_nms: float = 0.3
    score: float = 0.0

    def __post_init__(self) -> None:
        for name in ("eval_iou", "final_nms"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"thresholds.{name} must lie in (0, 1]")
        if not 0 <= self.score <= 1:
            raise ConfigError("thresholds.score must lie in [0, 1]")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 2
    clip_norm: Optional[float] = 10.0
    gate_l2: float = 1e-2

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.epochs < 0:
            raise ConfigError("optimizer.lr must be positive and optimizer.epochs non-negative")
        if self.batch_size < 2:
            raise ConfigError("optimizer.batch_size must be at least 2 for batch statistics")


@dataclass(frozen=True)
class DataConfig:
    """Dataset size, split and sample selection.

    ``min_box`` is the smallest lesion box side (pixels) that makes a slice
    a training sample.
    """

    dataset: Optional[str] = None
    subjects: int = 25
    train_fraction: float = 0.8
    min_box: int = 4
    negatives_per_subject: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ConfigError("data.train_fraction must lie in (0, 1)")
        if self.subjects < 0 or self.min_box < 1 or self.negatives_per_subject < 0:
            raise ConfigError("data.subjects, data.min_box and data.negatives_per_subject are out of range")


def _section(cls, data: Mapping[str, Any], name: str):
    if hasattr(cls, "from_dict"):
        return cls.from_dict(data)
    return from_dict(cls, data, name)


@dataclass
class RunConfig:
    """Everything a command needs besides its input and output paths."""

    seed: int
    net: NetConfig = field(default_factory=NetConfig)
    anchors: AnchorSpec = field(default_factory=AnchorSpec)
    relation: RelationSpec = field(default_factory=RelationSpec)
    window: WindowSpec = field(default_factory=WindowSpec)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    variants: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    SECTIONS = {
        "net": NetConfig,
        "anchors": AnchorSpec,
        "relation": RelationSpec,
        "window": WindowSpec,
        "phantom": PhantomSpec,
        "pipeline": PipelineConfig,
        "thresholds": Thresholds,
        "optimizer": OptimizerConfig,
        "data": DataConfig,
    }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("a run config must be a JSON object")
        unknown = sorted(set(data) - set(cls.SECTIONS) - {"seed", "variants"})
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        if data.get("seed") is None:
            raise ConfigError("a run config needs a seed")
        if isinstance(data["seed"], bool) or not isinstance(data["seed"], int) or data["seed"] < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {data['seed']!r}")
        sections = {name: _section(kind, data.get(name, {}), name) for name, kind in cls.SECTIONS.items()}
        variants = data.get("variants", {})
        if not isinstance(variants, Mapping) or not all(isinstance(v, Mapping) for v in variants.values()):
            raise ConfigError("variants must map labels to override objects")
        return cls(seed=data["seed"], variants={k: dict(v) for k, v in variants.items()}, **sections)

    def to_dict(self) -> Dict[str, Any]:
        content: Dict[str, Any] = {"seed": self.seed}
        for name in self.SECTIONS:
            content[name] = to_dict(getattr(self, name))
        content["variants"] = copy.deepcopy(self.variants)
        return content

    def model_net(self) -> NetConfig:
        """The backbone config with the input depth the pipeline feeds."""
        return dataclasses.replace(self.net, input_depth=self.pipeline.input_depth)

    def variant(self, label: str) -> "RunConfig":
        """This config with the overrides of variant ``label`` applied."""
        if label not in self.variants:
            raise ConfigError(f"no variant {label!r}; known: {sorted(self.variants)}")
        data = self.to_dict()
        data["variants"] = {}
        assignments = [f"{key}={json.dumps(value)}" for key, value in self.variants[label].items()]
        return RunConfig.from_dict(apply_overrides(data, assignments))

    def validate_paths(self) -> None:
        """Check that every path the config references exists."""
        if self.data.dataset is not None and not Path(self.data.dataset).is_dir():
            raise ConfigError(f"data.dataset {self.data.dataset} is not a directory")


def parse_value(text: str) -> Any:
    """JSON when it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Mapping[str, Any], assignments: Iterable[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` assignments to a copy of ``data``."""
    result = copy.deepcopy(dict(data))
    for assignment in assignments:
        key, sep, text = assignment.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {assignment!r} is not of the form key=value")
        parts = key.split(".")
        node = result
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = child
        node[parts[-1]] = parse_value(text)
        logger.debug("Config override %s = %r.", key, node[parts[-1]])
    return result


def read_config_data(path: Optional[PathLike]) -> Dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as file:
            return json.load(file)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err


def load_config(
    path: Optional[PathLike] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    base: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Read a config file (or start from ``base``), apply overrides and parse it."""
    data = dict(base or {})
    data.update(read_config_data(path))
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return RunConfig.from_dict(data)


def write_snapshot(config: RunConfig, directory: PathLike) -> Path:
    """Write ``config.snapshot.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / SNAPSHOT_NAME
    with open(path, "w") as file:
        json.dump(config.to_dict(), file, indent=2, sort_keys=True)
    return path
