"""Pseudo-3D residual feature extractors with 50 and 101 layers.

The slab's slices are folded into Conv1's output channels as a depth axis.
Inside the residual blocks that axis is moved into the batch so the 2-d
bottleneck kernels are shared across depth; the depth extent only shrinks at
the two depth pooling rows (Pool1 and Pool2). Stage outputs are exposed as
``[N, D*C, H, W]`` maps named ``block1`` .. ``block4``.
"""

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from hepadet.autodiff.graph import Graph
from hepadet.autodiff.ops import out_extent
from hepadet.autodiff.tensor import Tensor, as_array
from hepadet.constants import SLAB_DEPTH
from hepadet.errors import ConfigError, ContractError, ExtentError, ShapeError
from hepadet.preprocess.slab import Slab
from hepadet.utils.config import from_dict, to_dict

logger = logging.getLogger(__name__)

STAGE_REPEATS = {50: (3, 4, 6, 3), 101: (6, 8, 12, 6)}
BASE_WIDTH = 64
EXPANSION = 4
DEPTH_POOL = dict(window=3, stride=2, pad=1)
TRACE_ROWS = ("Conv1", "Pool1", "Block1", "Pool2", "Block2", "Block3", "Block4")
LEVELS = ("block1", "block2", "block3", "block4")

# Feature sizes of the stage rows at a 448 x 448 nine-slice input, identical for both depths.
CANONICAL_SIZES = ("16x224x224", "8x112x112", "8x112x112", "4x112x112", "4x56x56", "4x28x28", "4x14x14")
CANONICAL_CONCAT = "4x224x224"


@dataclass(frozen=True)
class NetConfig:
    """Backbone configuration.

    Parameters
    ----------
    depth : int
        50 or 101.
    width_scale : Fraction
        Multiplier on every channel count; ``64 * width_scale`` must be a
        positive integer.
    input_depth : int
        Slices fed to Conv1 (9 for 2.5D slabs, 1 for single slices).
    input_size : int
        In-plane extent of the input (448 for the canonical trace).
    conv1_depth : int
        Depth extent declared for the Conv1 output (16 canonically).
    concat_head : bool
        Also build the upsample-and-concatenate head.
    """

    depth: int = 50
    width_scale: Fraction = Fraction(1, 1)
    input_depth: int = SLAB_DEPTH
    input_size: int = 448
    conv1_depth: int = 16
    concat_head: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "width_scale", Fraction(self.width_scale))
        if self.depth not in STAGE_REPEATS:
            raise ConfigError(f"depth must be 50 or 101, got {self.depth}")
        if not 0 < self.width_scale <= 1:
            raise ConfigError(f"width_scale must lie in (0, 1], got {self.width_scale}")
        base = BASE_WIDTH * self.width_scale
        if base.denominator != 1:
            raise ConfigError(f"64 * width_scale must be an integer, got {base}")
        if self.input_depth < 1 or self.input_size < 1 or self.conv1_depth < 1:
            raise ConfigError("input_depth, input_size and conv1_depth must be positive")

    @property
    def stage_repeats(self) -> Tuple[int, int, int, int]:
        return STAGE_REPEATS[self.depth]

    @property
    def base_channels(self) -> int:
        return int(BASE_WIDTH * self.width_scale)

    def stage_channels(self, stage: int) -> Tuple[int, int]:
        """Bottleneck (mid, out) channels of block ``stage`` (1-based)."""
        mid = self.base_channels * 2 ** (stage - 1)
        return mid, mid * EXPANSION

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NetConfig":
        return from_dict(cls, data, "net")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


@dataclass(frozen=True)
class StageShape:
    name: str
    depth_extent: int
    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if min(self.depth_extent, self.channels, self.height, self.width) < 1:
            raise ExtentError(f"stage {self.name} has an extent below one")

    @property
    def size(self) -> str:
        """``D x H x W`` as written in the shape contracts."""
        return f"{self.depth_extent}x{self.height}x{self.width}"


@dataclass
class FeaturePyramid:
    """Named feature maps ordered from shallowest to deepest."""

    levels: List[Tuple[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self) -> None:
        extents = [array.shape[-2:] for _, array in self.levels]
        for shallow, deep in zip(extents, extents[1:]):
            if deep[0] > shallow[0] or deep[1] > shallow[1]:
                raise ShapeError(f"pyramid spatial extents increase: {extents}")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.levels]

    def __getitem__(self, name: str) -> np.ndarray:
        return dict(self.levels)[name]

    def __len__(self) -> int:
        return len(self.levels)


def _pooled_depth(depth: int) -> int:
    return out_extent(depth, DEPTH_POOL["window"], DEPTH_POOL["stride"], DEPTH_POOL["pad"])


def shape_trace(cfg: NetConfig, input_shape: Optional[Sequence[int]] = None) -> List[StageShape]:
    """Shapes after each stage row, from the configuration alone.

    Parameters
    ----------
    cfg : NetConfig
        The backbone.
    input_shape : (slices, H, W), optional
        Defaults to ``(cfg.input_depth, cfg.input_size, cfg.input_size)``.

    Returns
    -------
    List[StageShape]
        Rows Conv1, Pool1, Block1, Pool2, Block2, Block3, Block4.
    """
    if input_shape is None:
        input_shape = (cfg.input_depth, cfg.input_size, cfg.input_size)
    _, height, width = (int(extent) for extent in input_shape)
    rows = []
    depth = cfg.conv1_depth
    height, width = out_extent(height, 7, 2, 3), out_extent(width, 7, 2, 3)
    channels = cfg.base_channels
    rows.append(StageShape("Conv1", depth, channels, height, width))
    height, width = out_extent(height, 3, 2, 1), out_extent(width, 3, 2, 1)
    depth = _pooled_depth(depth)
    rows.append(StageShape("Pool1", depth, channels, height, width))
    channels = cfg.stage_channels(1)[1]
    rows.append(StageShape("Block1", depth, channels, height, width))
    depth = _pooled_depth(depth)
    rows.append(StageShape("Pool2", depth, channels, height, width))
    for stage in (2, 3, 4):
        height, width = out_extent(height, 3, 2, 1), out_extent(width, 3, 2, 1)
        channels = cfg.stage_channels(stage)[1]
        rows.append(StageShape(f"Block{stage}", depth, channels, height, width))
    return rows


def concat_shape(cfg: NetConfig, input_shape: Optional[Sequence[int]] = None) -> StageShape:
    """Shape of the concatenation head: Pool2 and Block2-4 upsampled to Conv1."""
    rows = {row.name: row for row in shape_trace(cfg, input_shape)}
    parts = ("Pool2", "Block2", "Block3", "Block4")
    channels = sum(rows[name].channels for name in parts)
    conv1 = rows["Conv1"]
    return StageShape("Concat", rows["Pool2"].depth_extent, channels, conv1.height, conv1.width)


def block_layer_count(cfg: NetConfig) -> int:
    return 3 * sum(cfg.stage_repeats)


def weighted_layer_count(cfg: NetConfig) -> int:
    """Conv1, three convolutions per bottleneck unit and the head dense layer."""
    return 1 + block_layer_count(cfg) + 1


def format_trace(cfg: NetConfig, rows: Sequence[StageShape], concat: Optional[StageShape] = None) -> str:
    """Render a trace as an aligned table followed by the layer tally."""
    frame = pd.DataFrame(
        [(row.name, row.size, row.channels) for row in rows],
        columns=["Layer name", "Feature size", "Channels"],
    )
    if concat is not None:
        frame.loc[len(frame)] = (concat.name, concat.size, concat.channels)
    blocks = block_layer_count(cfg)
    lines = [
        frame.to_string(index=False),
        "",
        f"R-{cfg.depth}: {blocks} weighted layers in blocks, {blocks + 1} with Conv1, "
        f"{weighted_layer_count(cfg)} with the classification head.",
    ]
    if weighted_layer_count(cfg) != cfg.depth:
        lines.append(f"Note: the layer tally differs from the nominal depth {cfg.depth}.")
    return "\n".join(lines)


def default_contract(depth: int) -> Dict[str, Any]:
    """The built-in contract checked by the trace command for ``depth``."""
    if depth not in STAGE_REPEATS:
        raise ConfigError(f"no contract for depth {depth}")
    rows = [{"layer": name, "size": size} for name, size in zip(TRACE_ROWS, CANONICAL_SIZES)]
    return {"depth": depth, "rows": rows, "concat": CANONICAL_CONCAT}


def load_contract(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path) as file:
        try:
            contract = json.load(file)
        except json.JSONDecodeError as err:
            raise ContractError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(contract, dict) or "rows" not in contract:
        raise ContractError(f"{path} has no 'rows' entry")
    return contract


def compare_to_contract(
    rows: Sequence[StageShape], concat: StageShape, contract: Mapping[str, Any]
) -> List[str]:
    """Per-row differences between a trace and a contract; empty when equal."""
    diff = []
    expected = list(contract["rows"])
    if len(expected) != len(rows):
        diff.append(f"row count: traced {len(rows)}, contract {len(expected)}")
    for row, want in zip(rows, expected):
        if row.name != want["layer"] or row.size != want["size"]:
            diff.append(f"{want['layer']}: traced {row.name} {row.size}, contract {want['size']}")
    if "concat" in contract and concat.size != contract["concat"]:
        diff.append(f"Concat: traced {concat.size}, contract {contract['concat']}")
    return diff


class _Builder:
    """Appends backbone nodes to a graph under an optional label scope."""

    def __init__(self, graph: Graph, scope: str) -> None:
        self.graph = graph
        self.scope = scope

    def label(self, name: str) -> str:
        return f"{self.scope}{name}"

    def conv(self, name: str, node: int, c_in: int, c_out: int, kernel: int, stride: int = 1, pad: int = 0) -> int:
        weight = self.graph.parameter(
            f"{name}.weight", shape=(c_out, c_in, kernel, kernel), fan_in=c_in * kernel * kernel
        )
        return self.graph.apply("conv2d", [node, weight], stride=stride, pad=pad)

    def bn(self, name: str, node: int, channels: int, scale: float = 1.0) -> int:
        gamma = self.graph.parameter(f"{name}.gamma", np.full(channels, scale))
        beta = self.graph.parameter(f"{name}.beta", np.zeros(channels))
        return self.graph.apply("batchnorm", [node, gamma, beta], key=name)

    def conv_bn(
        self,
        name: str,
        node: int,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        relu: bool = True,
        scale: float = 1.0,
    ) -> int:
        node = self.conv(f"{name}.conv", node, c_in, c_out, kernel, stride, kernel // 2)
        node = self.bn(f"{name}.bn", node, c_out, scale)
        return self.graph.apply("relu", [node]) if relu else node

    def unit(self, name: str, node: int, c_in: int, mid: int, out: int, stride: int) -> int:
        g = self.graph
        g.apply("scale", [node], label=self.label(f"{name}.in"), factor=1.0)
        branch = self.conv_bn(f"{name}.a", node, c_in, mid, 1)
        branch = self.conv_bn(f"{name}.b", branch, mid, mid, 3, stride)
        # Zero scale on the last norm: a fresh unit passes its shortcut through unchanged.
        branch = self.conv_bn(f"{name}.c", branch, mid, out, 1, relu=False, scale=0.0)
        if c_in != out or stride != 1:
            shortcut = self.conv_bn(f"{name}.proj", node, c_in, out, 1, stride, relu=False)
        else:
            shortcut = node
        summed = g.apply("add", [branch, shortcut])
        return g.apply("relu", [summed], label=self.label(f"{name}.out"))

    def depth_pool(self, node: int, depth: int, channels: int, height: int, width: int) -> Tuple[int, int]:
        g = self.graph
        folded = g.apply("reshape", [node], shape=(-1, depth * channels, height, width))
        pooled = g.apply("depth_maxpool", [folded], groups=depth, **DEPTH_POOL)
        new_depth = _pooled_depth(depth)
        return g.apply("reshape", [pooled], shape=(-1, channels, height, width)), new_depth


def add_backbone(graph: Graph, cfg: NetConfig, input_node: int, scope: str = "") -> Dict[str, int]:
    """Append a backbone reading ``input_node`` to ``graph``.

    Parameter names carry no scope, so calling this twice on one graph with
    different scopes shares every weight between the two branches.

    Returns
    -------
    Dict[str, int]
        Node ids of ``block1`` .. ``block4`` (and ``concat`` when enabled),
        each as an ``[N, D*C, H, W]`` map.
    """
    trace = {row.name: row for row in shape_trace(cfg)}
    b = _Builder(graph, scope)
    conv1 = trace["Conv1"]
    c1 = conv1.channels
    node = b.conv("conv1", input_node, cfg.input_depth, conv1.depth_extent * c1, 7, 2, 3)
    node = graph.apply("reshape", [node], shape=(-1, c1, conv1.height, conv1.width))
    node = graph.apply("relu", [b.bn("conv1.bn", node, c1)])
    node = graph.apply("maxpool2d", [node], window=3, stride=2, pad=1)
    pool1 = trace["Pool1"]
    node, depth = b.depth_pool(node, conv1.depth_extent, c1, pool1.height, pool1.width)

    outputs: Dict[str, int] = {}
    channels = c1
    for stage, repeats in enumerate(cfg.stage_repeats, start=1):
        mid, out = cfg.stage_channels(stage)
        row = trace[f"Block{stage}"]
        for index in range(repeats):
            stride = 2 if stage > 1 and index == 0 else 1
            node = b.unit(f"block{stage}.unit{index}", node, channels, mid, out, stride)
            channels = out
        outputs[f"block{stage}"] = graph.apply(
            "reshape", [node], label=b.label(f"block{stage}"), shape=(-1, depth * out, row.height, row.width)
        )
        if stage == 1:
            pool2 = trace["Pool2"]
            node, depth = b.depth_pool(node, depth, channels, pool2.height, pool2.width)
            outputs["pool2"] = graph.apply(
                "reshape", [node], label=b.label("pool2"), shape=(-1, depth * channels, pool2.height, pool2.width)
            )

    if cfg.concat_head:
        parts = []
        for name in ("pool2", "block2", "block3", "block4"):
            factor = conv1.height // trace[name.capitalize()].height
            parts.append(graph.apply("upsample_nearest", [outputs[name]], factor=factor))
        outputs["concat"] = graph.apply("concat", parts, label=b.label("concat"), axis=1)
    logger.debug("Built %s backbone R-%d with %d nodes.", scope or "unscoped", cfg.depth, graph.number_of_nodes())
    return outputs


def build_backbone(cfg: NetConfig, seed: int = 0) -> Graph:
    """A graph with input ``slab`` and labelled outputs ``block1`` .. ``block4``."""
    graph = Graph(name=f"R-{cfg.depth}", seed=seed)
    add_backbone(graph, cfg, graph.input("slab"))
    return graph


def _batch(slab: Union[Slab, Tensor, np.ndarray]) -> np.ndarray:
    if isinstance(slab, Slab):
        return slab.channels[None]
    return as_array(slab)


def extract_features(graph: Graph, slab: Union[Slab, Tensor, np.ndarray], mode: str = "infer") -> FeaturePyramid:
    """Run a backbone graph and collect its stage outputs, shallowest first."""
    batch = _batch(slab)
    expected = graph.parameters["conv1.weight"].shape[1]
    if batch.ndim != 4 or batch.shape[1] != expected:
        raise ShapeError(f"backbone expects [N, {expected}, H, W] input, got {batch.shape}")
    graph.run({"slab": batch}, targets=list(LEVELS), mode=mode)
    return FeaturePyramid([(name, graph.value(name)) for name in LEVELS])


def expected_parameter_count(cfg: NetConfig) -> int:
    """Closed-form number of trainable values in a backbone."""
    c1 = cfg.base_channels
    total = cfg.input_depth * cfg.conv1_depth * c1 * 49 + 2 * c1
    channels = c1
    for stage, repeats in enumerate(cfg.stage_repeats, start=1):
        mid, out = cfg.stage_channels(stage)
        for index in range(repeats):
            total += channels * mid + 2 * mid
            total += 9 * mid * mid + 2 * mid
            total += mid * out + 2 * out
            if channels != out or (stage > 1 and index == 0):
                total += channels * out + 2 * out
            channels = out
    return total


def parameter_count(graph: Graph) -> int:
    return graph.parameter_count()
