"""Texture features and the logistic normal/abnormal gate."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage, optimize
from scipy.special import expit

from hepadet.errors import RoiError
from hepadet.preprocess.slab import Slab

from .boxes import RoiBox

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 16
FEATURE_SIZE = HISTOGRAM_BINS + 2


@dataclass
class TextureFeatures:
    histogram: np.ndarray
    gradient: float
    variance: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.histogram, [self.gradient, self.variance]])


def texture_features(crop: np.ndarray) -> TextureFeatures:
    """Normalised 16-bin histogram on ``[0, 1]``, mean gradient magnitude and mean local (3x3) variance."""
    crop = np.asarray(crop, dtype=np.float64)
    counts, _ = np.histogram(np.clip(crop, 0.0, 1.0), bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    histogram = counts / counts.sum()
    if min(crop.shape) >= 2:
        gy, gx = np.gradient(crop)
        gradient = float(np.hypot(gy, gx).mean())
    else:
        gradient = 0.0
    mean = ndimage.uniform_filter(crop, size=3, mode="nearest")
    mean_sq = ndimage.uniform_filter(crop * crop, size=3, mode="nearest")
    variance = float(np.clip(mean_sq - mean * mean, 0.0, None).mean())
    return TextureFeatures(histogram, gradient, variance)


def crop_box(image: np.ndarray, box: Union[RoiBox, Sequence[float]]) -> np.ndarray:
    """Pixels covered by ``box``; the box must lie inside the image."""
    x0, y0, x1, y1 = box.coords if isinstance(box, RoiBox) else box
    height, width = image.shape[-2:]
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise RoiError(f"box {(x0, y0, x1, y1)} lies outside the {height}x{width} image")
    c0, c1 = int(np.floor(x0)), int(np.ceil(x1))
    r0, r1 = int(np.floor(y0)), int(np.ceil(y1))
    if c1 <= c0 or r1 <= r0:
        raise RoiError(f"box {(x0, y0, x1, y1)} covers no pixel")
    return image[..., r0:r1, c0:c1]


@dataclass
class GateModel:
    """Logistic model on standardised texture features; output is P(abnormal)."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_SIZE))
    bias: float = 0.0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_SIZE))
    scale: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_SIZE))

    def standardise(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.scale

    def confidence(self, features: np.ndarray) -> np.ndarray:
        return expit(self.standardise(features) @ self.weights + self.bias)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": np.array([self.bias]), "mean": self.mean, "scale": self.scale}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "GateModel":
        if not arrays:
            return cls()
        return cls(arrays["weights"], float(arrays["bias"][0]), arrays["mean"], arrays["scale"])


@dataclass(frozen=True)
class GateDecision:
    label: str
    confidence: float


def texture_gate(slab: Slab, roi: RoiBox, gate: GateModel, threshold: float = 0.5) -> GateDecision:
    """Score the centre-channel crop under ``roi`` as normal or abnormal."""
    features = texture_features(crop_box(slab.center, roi)).vector()
    confidence = float(gate.confidence(features))
    return GateDecision("abnormal" if confidence >= threshold else "normal", confidence)


def fit_gate(features: np.ndarray, labels: Sequence[int], l2: float = 1e-2) -> GateModel:
    """Fit the gate by L2-regularised logistic regression with L-BFGS.

    Parameters
    ----------
    features : numpy.ndarray
        ``[M, 18]`` texture vectors.
    labels : sequence of int
        1 for lesion crops, 0 for background crops.
    l2 : float
        Penalty on the weights (not the bias).
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_SIZE)
    labels = np.asarray(labels, dtype=np.float64)
    if len(features) == 0:
        return GateModel()
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale < 1e-8] = 1.0
    standard = (features - mean) / scale
    if labels.min() == labels.max():
        bias = 3.0 if labels[0] == 1 else -3.0
        logger.warning("Gate fitted on a single class; using a constant bias of %.1f.", bias)
        return GateModel(np.zeros(FEATURE_SIZE), bias, mean, scale)

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        weights, bias = theta[:-1], theta[-1]
        logits = standard @ weights + bias
        loss = np.mean(np.logaddexp(0.0, logits) - labels * logits) + 0.5 * l2 * weights @ weights
        residual = (expit(logits) - labels) / len(labels)
        grad = np.concatenate([standard.T @ residual + l2 * weights, [residual.sum()]])
        return loss, grad

    result = optimize.minimize(objective, np.zeros(FEATURE_SIZE + 1), jac=True, method="L-BFGS-B")
    logger.debug("Gate fit: loss %.4f after %d iterations.", result.fun, result.nit)
    return GateModel(result.x[:-1], float(result.x[-1]), mean, scale)
