"""Cross-phase relation operator.

For reference features ``x`` and another phase's features ``y`` the operator
computes, at every position ``p``::

    L(p) = sum_q f(x_p, y_q) * g(v_q) / sum_q f(x_p, y_q)

where ``f`` is an exponentiated affinity between embeddings ``theta x_p``
and ``phi y_q`` and ``g`` a learned linear map. With the default
``nonlocal_gy`` variant the values ``v`` come from ``y``. The
``literal_gx`` variant applies ``g`` to ``x_p`` instead, which factors
out of the sum and reduces the operator to ``g(x)``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from hepadet.autodiff.graph import Graph
from hepadet.autodiff.ops import affinity_logits
from hepadet.autodiff.rng import fan_in_uniform
from hepadet.constants import PHASES
from hepadet.errors import ConfigError, ShapeError, SizeGuardError
from hepadet.utils.config import from_dict, to_dict

from .backbone import FeaturePyramid

logger = logging.getLogger(__name__)

F_KINDS = ("embedded_dot", "gaussian")
VARIANTS = ("nonlocal_gy", "literal_gx")
BRUTEFORCE_LIMIT = 4096


@dataclass(frozen=True)
class RelationSpec:
    f_kind: str = "embedded_dot"
    g_kind: str = "linear"
    variant: str = "nonlocal_gy"
    embed_channels: int = 8
    reference_phase: str = "arterial"

    def __post_init__(self) -> None:
        if self.f_kind not in F_KINDS:
            raise ConfigError(f"f_kind must be one of {F_KINDS}, got {self.f_kind!r}")
        if self.g_kind != "linear":
            raise ConfigError(f"only the linear value transform is supported, got {self.g_kind!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.embed_channels < 1:
            raise ConfigError("embed_channels must be at least 1")
        if self.reference_phase not in PHASES:
            raise ConfigError(f"unknown reference phase {self.reference_phase!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RelationSpec":
        return from_dict(cls, data, "relation")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


@dataclass
class RelationWeights:
    """``theta`` and ``phi`` are ``[E, C]`` embeddings, ``g`` is ``[C, C]``."""

    theta: np.ndarray
    phi: np.ndarray
    g: np.ndarray

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.theta.shape != self.phi.shape:
            raise ShapeError(f"theta {self.theta.shape} and phi {self.phi.shape} differ")
        channels = self.theta.shape[1]
        if self.g.shape != (channels, channels):
            raise ShapeError(f"g must be [{channels}, {channels}], got {self.g.shape}")

    @classmethod
    def init(cls, channels: int, spec: RelationSpec, seed: int, name: str = "relation") -> "RelationWeights":
        shape = (spec.embed_channels, channels)
        return cls(
            theta=fan_in_uniform(shape, channels, seed, name, "theta"),
            phi=fan_in_uniform(shape, channels, seed, name, "phi"),
            g=fan_in_uniform((channels, channels), channels, seed, name, "g"),
        )

    @classmethod
    def from_graph(cls, graph: Graph, level: str) -> "RelationWeights":
        weights = graph.get_weights()
        prefix = f"relation.{level}"
        return cls(*(weights[f"{prefix}.{part}"][:, :, 0, 0] for part in ("theta", "phi", "g")))


def _positions(feat: np.ndarray) -> np.ndarray:
    return feat.reshape(feat.shape[0], -1).T


def _check(x_feat: np.ndarray, y_feat: np.ndarray, weights: RelationWeights) -> None:
    if x_feat.ndim != 3 or x_feat.shape != y_feat.shape:
        raise ShapeError(f"relation needs two equal [C, H, W] maps, got {x_feat.shape} and {y_feat.shape}")
    if weights.theta.shape[1] != x_feat.shape[0]:
        raise ShapeError(f"weights expect {weights.theta.shape[1]} channels, features have {x_feat.shape[0]}")


def relate(x_feat: np.ndarray, y_feat: np.ndarray, spec: RelationSpec, weights: RelationWeights) -> np.ndarray:
    """Relate reference features ``x_feat`` to ``y_feat``; both ``[C, H, W]``."""
    x_feat = np.asarray(x_feat, dtype=np.float64)
    y_feat = np.asarray(y_feat, dtype=np.float64)
    _check(x_feat, y_feat, weights)
    xp, yp = _positions(x_feat), _positions(y_feat)
    q = xp @ weights.theta.T
    k = yp @ weights.phi.T
    logits = affinity_logits(q[None], k[None], spec.f_kind)[0]
    logits = logits - logits.max(axis=1, keepdims=True)
    affinity = np.exp(logits)
    affinity /= affinity.sum(axis=1, keepdims=True)
    if spec.variant == "nonlocal_gy":
        out = affinity @ (yp @ weights.g.T)
    else:
        out = affinity.sum(axis=1, keepdims=True) * (xp @ weights.g.T)
    return out.T.reshape(x_feat.shape)


def relate_bruteforce(
    x_feat: np.ndarray, y_feat: np.ndarray, spec: RelationSpec, weights: RelationWeights
) -> np.ndarray:
    """Reference evaluation by a direct double loop over positions."""
    x_feat = np.asarray(x_feat, dtype=np.float64)
    y_feat = np.asarray(y_feat, dtype=np.float64)
    _check(x_feat, y_feat, weights)
    channels, height, width = x_feat.shape
    count = height * width
    if count > BRUTEFORCE_LIMIT:
        raise SizeGuardError(f"{count} positions exceed the brute-force limit of {BRUTEFORCE_LIMIT}")
    xp, yp = _positions(x_feat), _positions(y_feat)
    q = [weights.theta @ xp[p] for p in range(count)]
    k = [weights.phi @ yp[p] for p in range(count)]
    values = [weights.g @ (yp[p] if spec.variant == "nonlocal_gy" else xp[p]) for p in range(count)]

    def log_f(a: np.ndarray, b: np.ndarray) -> float:
        if spec.f_kind == "embedded_dot":
            return float(a @ b)
        return -float((a - b) @ (a - b))

    out = np.zeros((count, channels))
    for p in range(count):
        peak = max(log_f(q[p], k[r]) for r in range(count))
        numerator = np.zeros(channels)
        normaliser = 0.0
        for r in range(count):
            f = math.exp(log_f(q[p], k[r]) - peak)
            normaliser += f
            numerator += f * (values[r] if spec.variant == "nonlocal_gy" else values[p])
        out[p] = numerator / normaliser
    return out.T.reshape(x_feat.shape)


RelateFn = Callable[[np.ndarray, np.ndarray, RelationSpec, RelationWeights], np.ndarray]


def register_phases(
    features: Mapping[str, FeaturePyramid],
    spec: RelationSpec,
    weights: Mapping[str, RelationWeights],
    relate_fn: RelateFn = relate,
) -> FeaturePyramid:
    """Merge per-phase pyramids around the reference phase.

    Every level of the result is the elementwise mean of the reference
    features and, for each other phase ``y``, ``relate(reference, y)``.
    Levels may be ``[C, H, W]`` or batched ``[N, C, H, W]``.
    """
    if len(features) < 2:
        raise ValueError(f"relation needs at least two phases, got {sorted(features)}")
    if spec.reference_phase not in features:
        raise ValueError(f"reference phase {spec.reference_phase} is missing")
    reference = features[spec.reference_phase]
    others = [phase for phase in PHASES if phase in features and phase != spec.reference_phase]
    merged = []
    for name, x in reference.levels:
        terms = [x]
        for phase in others:
            y = features[phase][name]
            if y.shape != x.shape:
                raise ShapeError(f"{phase} level {name} has shape {y.shape}, reference {x.shape}")
            if x.ndim == 3:
                terms.append(relate_fn(x, y, spec, weights[name]))
            else:
                terms.append(np.stack([relate_fn(xi, yi, spec, weights[name]) for xi, yi in zip(x, y)]))
        merged.append((name, sum(terms) / len(terms)))
    return FeaturePyramid(merged)


def add_relation(
    graph: Graph,
    level: str,
    reference: int,
    others: Sequence[int],
    channels: int,
    spec: RelationSpec,
) -> int:
    """Graph form of :func:`register_phases` for one pyramid level.

    The literal variant never reads the embeddings, so only ``g`` is created
    for it.
    """
    shape = (spec.embed_channels, channels, 1, 1)
    if spec.variant == "nonlocal_gy":
        theta = graph.parameter(f"relation.{level}.theta", shape=shape, fan_in=channels)
        phi = graph.parameter(f"relation.{level}.phi", shape=shape, fan_in=channels)
    g = graph.parameter(f"relation.{level}.g", shape=(channels, channels, 1, 1), fan_in=channels)
    terms = [reference]
    for other in others:
        if spec.variant == "nonlocal_gy":
            q = graph.apply("conv2d", [reference, theta])
            k = graph.apply("conv2d", [other, phi])
            v = graph.apply("conv2d", [other, g])
            terms.append(graph.apply("attention", [q, k, v], kind=spec.f_kind))
        else:
            terms.append(graph.apply("conv2d", [reference, g]))
    return graph.apply("mean", terms, label=f"related.{level}")


def energy_map(
    x_feat: np.ndarray,
    y_feat: np.ndarray,
    spec: RelationSpec,
    weights: RelationWeights,
    channels: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Per-position squared norm of the relation residual ``relate(x, y) - x``."""
    residual = relate(x_feat, y_feat, spec, weights) - np.asarray(x_feat, dtype=np.float64)
    if channels is not None:
        residual = residual[list(channels)]
    return (residual ** 2).sum(axis=0)


def relation_energy(
    x_feat: np.ndarray,
    y_feat: np.ndarray,
    spec: RelationSpec,
    weights: RelationWeights,
    mask: Optional[np.ndarray] = None,
    channels: Optional[Sequence[int]] = None,
) -> float:
    """Mean relation residual energy, optionally inside ``mask``."""
    energy = energy_map(x_feat, y_feat, spec, weights, channels)
    if mask is not None:
        energy = energy[np.asarray(mask, dtype=bool)]
    return float(energy.mean()) if energy.size else 0.0


def coordinate_features(intensity: np.ndarray, bandwidth: float) -> np.ndarray:
    """Stack an intensity map with its row/column coordinates scaled by ``1/bandwidth``."""
    rows, cols = np.meshgrid(
        np.arange(intensity.shape[0], dtype=np.float64),
        np.arange(intensity.shape[1], dtype=np.float64),
        indexing="ij",
    )
    return np.stack([np.asarray(intensity, dtype=np.float64), rows / bandwidth, cols / bandwidth])


POSITION_SPEC = RelationSpec(f_kind="gaussian", embed_channels=2)
POSITION_WEIGHTS = RelationWeights(
    theta=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    phi=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    g=np.eye(3),
)


def phase_change_energy(
    reference: np.ndarray, other: np.ndarray, mask: np.ndarray, bandwidth: float = 1.5
) -> float:
    """Relation energy of the intensity channel with position-only affinity.

    The affinity is a spatial Gaussian, so the relation output at each
    position is a local average of the other phase; the residual against
    the reference then measures how much the region changed between phases.
    """
    x = coordinate_features(reference, bandwidth)
    y = coordinate_features(other, bandwidth)
    return relation_energy(x, y, POSITION_SPEC, POSITION_WEIGHTS, mask=mask, channels=[0])


def phase_change_map(reference: np.ndarray, other: np.ndarray, bandwidth: float = 1.5) -> np.ndarray:
    """Per-position energy behind :func:`phase_change_energy`."""
    x = coordinate_features(reference, bandwidth)
    y = coordinate_features(other, bandwidth)
    return energy_map(x, y, POSITION_SPEC, POSITION_WEIGHTS, channels=[0])
