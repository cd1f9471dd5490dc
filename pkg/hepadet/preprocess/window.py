"""HU windowing to 8-bit display values."""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from hepadet.errors import ConfigError
from hepadet.utils.config import from_dict, to_dict


@dataclass(frozen=True)
class WindowSpec:
    """Linear HU window; ``level`` is the centre and ``width`` the span."""

    width: float = 80.0
    level: float = 150.0

    def __post_init__(self) -> None:
        if not self.width > 0:
            raise ConfigError(f"window width must be positive, got {self.width}")

    @property
    def lower(self) -> float:
        return self.level - self.width / 2

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WindowSpec":
        return from_dict(cls, data, "window")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def window_to_u8(hu: np.ndarray, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Map HU values onto ``[0, 255]``.

    Parameters
    ----------
    hu : numpy.ndarray
        HU values of any shape.
    spec : WindowSpec
        The window.

    Returns
    -------
    numpy.ndarray
        ``uint8`` array of the same shape; values below the window are 0 and
        values above it 255.
    """
    scaled = (np.asarray(hu, dtype=np.float64) - spec.lower) * 255.0 / spec.width
    return np.clip(round_half_away(scaled), 0, 255).astype(np.uint8)
