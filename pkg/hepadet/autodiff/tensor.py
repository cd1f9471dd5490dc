"""Dense 64-bit tensor."""

from typing import Iterable, Sequence, Tuple

import numpy as np

from hepadet.errors import ExtentError, ShapeError


class Tensor:
    """Dense N-dimensional array of 64-bit reals.

    The leading (batch) extent may be zero so that empty ROI batches can
    flow through the heads; every other extent must be at least one.

    Parameters
    ----------
    data : array_like
        Values, reshaped to ``shape`` in row-major order when it is given.
    shape : sequence of int, optional
        Extents. Defaults to the shape of ``data``.
    requires_grad : bool
        Whether the tensor is a trainable parameter.
    """

    def __init__(
        self,
        data: Iterable,
        shape: Sequence[int] = None,
        requires_grad: bool = False,
    ) -> None:
        array = np.asarray(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(extent) for extent in shape)
            if int(np.prod(shape)) != array.size:
                raise ShapeError(
                    f"{array.size} values cannot fill a tensor of shape {shape}"
                )
            array = array.reshape(shape)
        for axis, extent in enumerate(array.shape):
            if extent < 1 and not (axis == 0 and extent == 0):
                raise ExtentError(f"extent {extent} on axis {axis} is not positive")
        self.array = np.ascontiguousarray(array)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(tuple(shape)), requires_grad=requires_grad)


def as_array(value) -> np.ndarray:
    """Return the ndarray behind a Tensor, or the value as a float array."""
    if isinstance(value, Tensor):
        return value.array
    return np.asarray(value, dtype=np.float64)
