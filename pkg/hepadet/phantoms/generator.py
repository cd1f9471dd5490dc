"""Seeded synthetic multi-phase liver volumes with labelled lesions.

The HU dynamics below are synthetic: every lesion curve is an offset from
the enhanced parenchyma at the same phase, chosen only so the three classes
separate the way they do on clinical scans.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import ndimage

from hepadet.autodiff.rng import generator
from hepadet.constants import HU_MAX, HU_MIN, LESION_CLASSES, PHASES
from hepadet.errors import ConfigError, PlacementError
from hepadet.preprocess.volume import Volume
from hepadet.utils.config import from_dict, to_dict

logger = logging.getLogger(__name__)

Box = Tuple[int, int, int, int]

DEFAULT_CURVES = {
    "cyst": (-50.0, -60.0, -80.0),
    "hemangioma": (-10.0, -15.0, 5.0),
    "hcc": (-5.0, 40.0, -20.0),
}
DEFAULT_RIM_CURVE = (-10.0, 50.0, 5.0)
DEFAULT_RADII = {name: (3.0, 7.0) for name in LESION_CLASSES}


def _pairs(mapping: Mapping[str, Any]) -> Dict[str, Tuple[float, ...]]:
    return {str(k): tuple(float(v) for v in values) for k, values in mapping.items()}


@dataclass
class PhantomSpec:
    """Geometry, contrast curves and noise of a phantom subject.

    Parameters
    ----------
    dims : Tuple[int, int, int]
        ``(D, H, W)`` voxels.
    spacing : Tuple[float, float, float]
        ``(sz, sy, sx)`` in millimetres.
    lesion_count : Tuple[int, int]
        Inclusive range of lesions per subject.
    radius_mm : Dict[str, Tuple[float, float]]
        Per-class radius range.
    curves : Dict[str, Tuple[float, float, float]]
        Per-class HU offset from parenchyma at each phase. For hemangioma
        this is the core; the rim follows ``rim_curve``.
    phase_times : Tuple[float, float, float]
        Seconds after injection; must increase.
    lesion_classes : Tuple[str, ...], optional
        Forces the class sequence (and therefore the count) of every subject.
    """

    dims: Tuple[int, int, int] = (24, 64, 64)
    spacing: Tuple[float, float, float] = (3.0, 1.0, 1.0)
    lesion_count: Tuple[int, int] = (1, 3)
    radius_mm: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RADII))
    noise_sigma: float = 6.0
    parenchyma_hu: float = 60.0
    parenchyma_enhancement: Tuple[float, float, float] = (0.0, 10.0, 30.0)
    body_hu: float = 40.0
    curves: Dict[str, Tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_CURVES))
    rim_curve: Tuple[float, float, float] = DEFAULT_RIM_CURVE
    rim_fraction: float = 0.3
    phase_times: Tuple[float, float, float] = (0.0, 25.0, 115.0)
    texture_hu: float = 5.0
    texture_scales: Tuple[float, ...] = (1.0, 2.0, 4.0)
    deformation: float = 0.2
    max_attempts: int = 1000
    lesion_classes: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.radius_mm = _pairs(self.radius_mm)
        self.curves = _pairs(self.curves)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive extents, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError(f"spacing must be three positive values, got {self.spacing}")
        low, high = self.lesion_count
        if not 0 <= low <= high:
            raise ConfigError(f"lesion_count range {self.lesion_count} is invalid")
        for name in LESION_CLASSES:
            if name not in self.radius_mm or name not in self.curves:
                raise ConfigError(f"class {name!r} needs a radius range and a curve")
            r_low, r_high = self.radius_mm[name]
            if not 0 < r_low <= r_high:
                raise ConfigError(f"radius range for {name} must be positive and ordered")
            if len(self.curves[name]) != len(PHASES):
                raise ConfigError(f"curve for {name} needs one offset per phase")
        if len(self.phase_times) != len(PHASES) or list(self.phase_times) != sorted(set(self.phase_times)):
            raise ConfigError(f"phase times must strictly increase, got {self.phase_times}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0 < self.rim_fraction < 1:
            raise ConfigError("rim_fraction must lie in (0, 1)")
        if self.lesion_classes is not None:
            self.lesion_classes = tuple(self.lesion_classes)
            unknown = sorted(set(self.lesion_classes) - set(LESION_CLASSES))
            if unknown:
                raise ConfigError(f"unknown lesion classes {unknown}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PhantomSpec":
        return from_dict(cls, data, "phantom")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


@dataclass
class GroundTruthLesion:
    """A rendered lesion.

    ``boxes`` maps a slice index to ``(x0, y0, x1, y1)`` with exclusive upper
    corners, tight around the lesion mask on that slice.
    """

    center: Tuple[int, int, int]
    radius_mm: float
    lesion_class: str
    boxes: Dict[int, Box]

    @property
    def label(self) -> int:
        return LESION_CLASSES.index(self.lesion_class)

    @property
    def center_slice(self) -> int:
        return int(self.center[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": [int(c) for c in self.center],
            "radius_mm": float(self.radius_mm),
            "class": self.lesion_class,
            "boxes": {str(int(k)): [int(c) for c in v] for k, v in sorted(self.boxes.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GroundTruthLesion":
        return cls(
            center=tuple(int(c) for c in data["center"]),
            radius_mm=float(data["radius_mm"]),
            lesion_class=str(data["class"]),
            boxes={int(k): tuple(int(c) for c in v) for k, v in data["boxes"].items()},
        )


@dataclass
class PhaseVolumeSet:
    """The three aligned phase volumes of one subject and its lesions.

    ``label_map`` (0 outside lesions, ``i + 1`` inside lesion ``i``) is kept
    in memory only; it is ``None`` for subjects read back from disk.
    """

    subject_id: str
    volumes: Dict[str, Volume]
    lesions: List[GroundTruthLesion]
    label_map: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if set(self.volumes) != set(PHASES):
            raise ValueError(f"need exactly the phases {PHASES}, got {sorted(self.volumes)}")
        shapes = {v.shape for v in self.volumes.values()}
        spacings = {v.spacing for v in self.volumes.values()}
        if len(shapes) != 1 or len(spacings) != 1:
            raise ValueError("phase volumes must share dims and spacing")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.volumes[PHASES[0]].shape

    def lesion_mask(self, index: int) -> np.ndarray:
        if self.label_map is None:
            raise ValueError(f"{self.subject_id} has no label map")
        return self.label_map == index + 1

    def lesions_on_slice(self, slice_index: int) -> List[GroundTruthLesion]:
        return [lesion for lesion in self.lesions if slice_index in lesion.boxes]

    def lesion_free_slices(self) -> List[int]:
        covered = {k for lesion in self.lesions for k in lesion.boxes}
        return [k for k in range(self.shape[0]) if k not in covered]


def _grid(dims: Tuple[int, ...]) -> List[np.ndarray]:
    return list(np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij"))


def liver_mask(spec: PhantomSpec) -> np.ndarray:
    """Axis-aligned ellipsoid centred in the volume."""
    z, y, x = _grid(spec.dims)
    depth, height, width = spec.dims
    semi = (max(0.45 * depth, 0.5), 0.38 * height, 0.40 * width)
    centre = ((depth - 1) / 2, (height - 1) / 2, (width - 1) / 2)
    radius = sum(((g - c) / s) ** 2 for g, c, s in zip((z, y, x), centre, semi))
    return radius <= 1.0


def body_mask(spec: PhantomSpec) -> np.ndarray:
    """Elliptic cylinder along z enclosing the liver."""
    _, y, x = _grid(spec.dims)
    _, height, width = spec.dims
    return ((y - (height - 1) / 2) / (0.48 * height)) ** 2 + ((x - (width - 1) / 2) / (0.48 * width)) ** 2 <= 1.0


def smooth_texture(shape: Tuple[int, ...], scales: Tuple[float, ...], rng: np.random.Generator) -> np.ndarray:
    """Sum of gaussian-smoothed white noise octaves, scaled to unit std."""
    texture = np.zeros(shape)
    for weight, sigma in enumerate(scales, start=1):
        octave = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="reflect")
        std = octave.std()
        if std > 0:
            texture += octave / std / weight
    std = texture.std()
    return texture / std if std > 0 else texture


def _lesion_shape(
    spec: PhantomSpec, centre: np.ndarray, radius_mm: float, coeffs: np.ndarray
) -> Tuple[Tuple[slice, ...], np.ndarray, np.ndarray]:
    """Mask and normalised radius of a deformed sphere inside its bounding region."""
    spacing = np.asarray(spec.spacing)
    reach = np.ceil(radius_mm * (1 + spec.deformation) / spacing).astype(int) + 1
    region = tuple(
        slice(max(int(c) - int(r), 0), min(int(c) + int(r) + 1, d)) for c, r, d in zip(centre, reach, spec.dims)
    )
    axes = [np.arange(s.start, s.stop, dtype=np.float64) for s in region]
    offsets = [(g - c) * s for g, c, s in zip(np.meshgrid(*axes, indexing="ij"), centre, spacing)]
    dist = np.sqrt(sum(o ** 2 for o in offsets))
    unit = [o / np.maximum(dist, 1e-9) for o in offsets]
    # Low-order radial harmonics; coeffs has six entries.
    harmonics = unit + [unit[0] * unit[1], unit[1] * unit[2], unit[0] * unit[2]]
    bump = sum(c * h for c, h in zip(coeffs, harmonics))
    local_radius = radius_mm * np.clip(1.0 + spec.deformation * bump, 0.5, 1.0 + spec.deformation)
    rho = dist / local_radius
    return region, rho <= 1.0, rho


def _tight_boxes(mask: np.ndarray, z0: int, y0: int, x0: int) -> Dict[int, Box]:
    boxes = {}
    for k in range(mask.shape[0]):
        ys, xs = np.nonzero(mask[k])
        if len(ys):
            z, y, x = int(z0) + k, int(y0), int(x0)
            boxes[z] = (x + int(xs.min()), y + int(ys.min()), x + int(xs.max()) + 1, y + int(ys.max()) + 1)
    return boxes


def generate_phantom(spec: PhantomSpec, seed: int, subject_id: str = "subject000") -> PhaseVolumeSet:
    """Render one subject.

    Identical ``(spec, seed, subject_id)`` give bitwise-identical volumes.

    Raises
    ------
    PlacementError
        When a lesion cannot be placed inside the liver without touching
        another lesion after ``spec.max_attempts`` tries.
    """
    rng = generator(seed, "phantom", subject_id)
    if spec.lesion_classes is not None:
        classes = list(spec.lesion_classes)
    else:
        count = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
        classes = [LESION_CLASSES[int(i)] for i in rng.integers(0, len(LESION_CLASSES), size=count)]

    liver = liver_mask(spec)
    candidates = np.argwhere(liver)
    labels = np.zeros(spec.dims, dtype=np.int32)
    rho_map = np.zeros(spec.dims)
    lesions: List[GroundTruthLesion] = []
    for index, name in enumerate(classes):
        radius = float(rng.uniform(*spec.radius_mm[name]))
        for _ in range(spec.max_attempts):
            centre = candidates[rng.integers(len(candidates))]
            coeffs = rng.standard_normal(6) / np.sqrt(6)
            region, mask, rho = _lesion_shape(spec, centre.astype(np.float64), radius, coeffs)
            if not mask.any() or not liver[region][mask].all():
                continue
            # One voxel of clearance from every earlier lesion.
            grown = ndimage.binary_dilation(mask)
            if (labels[region][grown] != 0).any():
                continue
            break
        else:
            raise PlacementError(
                f"{subject_id}: could not place {name} lesion {index} after {spec.max_attempts} attempts"
            )
        labels[region][mask] = index + 1
        rho_map[region][mask] = rho[mask]
        start = tuple(int(s.start) for s in region)
        lesions.append(
            GroundTruthLesion(
                center=tuple(int(c) for c in centre),
                radius_mm=round(radius, 6),
                lesion_class=name,
                boxes=_tight_boxes(mask, *start),
            )
        )
        logger.debug("%s: placed %s at %s, radius %.2f mm.", subject_id, name, tuple(centre), radius)

    texture = spec.texture_hu * smooth_texture(spec.dims, spec.texture_scales, generator(seed, "texture", subject_id))
    body = body_mask(spec)
    volumes = {}
    for p, phase in enumerate(PHASES):
        parenchyma = spec.parenchyma_hu + spec.parenchyma_enhancement[p]
        hu = np.where(body, spec.body_hu, float(HU_MIN))
        hu = np.where(liver, parenchyma + texture, hu)
        for index, lesion in enumerate(lesions):
            inside = labels == index + 1
            offset = np.full(inside.sum(), spec.curves[lesion.lesion_class][p])
            if lesion.lesion_class == "hemangioma":
                rim = rho_map[inside] >= 1.0 - spec.rim_fraction
                offset[rim] = spec.rim_curve[p]
            hu[inside] = parenchyma + offset
        noise = generator(seed, "noise", subject_id, phase).normal(0.0, spec.noise_sigma, size=spec.dims)
        hu = np.clip(np.rint(np.where(body, hu + noise, hu)), HU_MIN, HU_MAX)
        volumes[phase] = Volume(hu.astype(np.int16), spec.spacing, phase, subject_id)
    logger.info("Generated %s with %d lesions.", subject_id, len(lesions))
    return PhaseVolumeSet(subject_id, volumes, lesions, labels)
