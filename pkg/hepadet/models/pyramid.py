"""Top-down fusion of deep and shallow feature maps."""

import logging
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from hepadet.autodiff.graph import Graph
from hepadet.autodiff.ops import OPS, RunContext
from hepadet.errors import ShapeError

from .backbone import FeaturePyramid

logger = logging.getLogger(__name__)

Lateral = Tuple[np.ndarray, np.ndarray]


def upsample_factor(shallow: Sequence[int], deep: Sequence[int]) -> int:
    """Integer factor taking a deep level's extent to the next shallower one."""
    if deep[0] >= shallow[0] or deep[1] >= shallow[1]:
        raise ShapeError(f"levels not strictly ordered by spatial extent: {tuple(shallow)} then {tuple(deep)}")
    factor = shallow[0] // deep[0]
    if factor * deep[0] != shallow[0] or factor * deep[1] != shallow[1]:
        raise ShapeError(f"extent {tuple(shallow)} is not an integer multiple of {tuple(deep)}")
    return factor


def _lateral(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    out, _ = OPS["conv2d"].forward([x, weight, bias], RunContext())
    return out


def fuse_pyramid(pyramid: FeaturePyramid, laterals: Mapping[str, Lateral], top_down: bool = True) -> FeaturePyramid:
    """Fuse a pyramid from the deepest level upwards.

    Each fused level is the lateral 1x1 convolution of the level plus the
    nearest-neighbour upsampled fused map of the next deeper level; the
    deepest level is its lateral alone.

    Parameters
    ----------
    pyramid : FeaturePyramid
        At least two levels, shallowest first, with strictly decreasing
        spatial extent.
    laterals : Mapping[str, (weight, bias)]
        Per level, a ``[F, C, 1, 1]`` weight and ``[F]`` bias.
    top_down : bool
        When False only the laterals are applied.

    Returns
    -------
    FeaturePyramid
        Same level names and spatial extents.
    """
    if len(pyramid) < 2:
        raise ShapeError("fusion needs at least two pyramid levels")
    shapes = [array.shape[-2:] for _, array in pyramid.levels]
    factors = [upsample_factor(shallow, deep) for shallow, deep in zip(shapes, shapes[1:])]
    fused: List[Tuple[str, np.ndarray]] = []
    above = None
    for index in reversed(range(len(pyramid))):
        name, array = pyramid.levels[index]
        weight, bias = laterals[name]
        level = _lateral(array, np.asarray(weight, dtype=np.float64), np.asarray(bias, dtype=np.float64))
        if top_down and above is not None:
            factor = factors[index]
            level = level + above.repeat(factor, axis=2).repeat(factor, axis=3)
        fused.append((name, level))
        above = level
    return FeaturePyramid(list(reversed(fused)))


def add_fusion(
    graph: Graph,
    levels: Sequence[Tuple[str, int, int, Tuple[int, int]]],
    channels: int,
    top_down: bool = True,
    scope: str = "",
) -> Dict[str, int]:
    """Graph form of :func:`fuse_pyramid`.

    Parameters
    ----------
    graph : Graph
        Graph to extend.
    levels : sequence of (name, node, channels, (H, W))
        Backbone levels, shallowest first.
    channels : int
        Output channels of every fused level.
    top_down : bool
        Add the upsampled deeper level.
    scope : str
        Prefix for node labels; weights are shared across scopes.

    Returns
    -------
    Dict[str, int]
        Fused node per level name, labelled ``{scope}fused.{name}``.
    """
    if len(levels) < 2:
        raise ShapeError("fusion needs at least two pyramid levels")
    extents = [extent for _, _, _, extent in levels]
    factors = [upsample_factor(shallow, deep) for shallow, deep in zip(extents, extents[1:])]
    fused: Dict[str, int] = {}
    above = None
    for index in reversed(range(len(levels))):
        name, node, c_in, _ = levels[index]
        weight = graph.parameter(f"fusion.{name}.weight", shape=(channels, c_in, 1, 1), fan_in=c_in)
        bias = graph.parameter(f"fusion.{name}.bias", np.zeros(channels))
        level = graph.apply("conv2d", [node, weight, bias])
        if top_down and above is not None:
            up = graph.apply("upsample_nearest", [above], factor=factors[index])
            level = graph.apply("add", [level, up])
        level = graph.apply("scale", [level], label=f"{scope}fused.{name}", factor=1.0)
        fused[name] = level
        above = level
    return fused
