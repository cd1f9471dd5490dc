"""Exception hierarchy for the package.

Each error also derives from the builtin a caller would naturally catch, so
``except ValueError`` keeps working around shape and config problems.
"""


class HepadetError(Exception):
    """Base class for every error raised by hepadet."""


class ShapeError(HepadetError, ValueError):
    """Operand shapes do not agree."""


class ExtentError(HepadetError, ValueError):
    """An output extent would be smaller than one."""


class DegenerateBatchError(HepadetError, ValueError):
    """Batch statistics are undefined for the given batch."""


class LabelError(HepadetError, ValueError):
    """A class label is outside the valid range."""


class NonScalarLossError(HepadetError, ValueError):
    """Backward was asked to start from a non-scalar node."""


class ConfigError(HepadetError, ValueError):
    """A configuration document or value is invalid."""


class ContractError(HepadetError):
    """A traced shape table disagrees with its contract."""

    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = diff or []


class PlacementError(HepadetError, RuntimeError):
    """Lesions could not be placed without overlap."""


class DatasetError(HepadetError, ValueError):
    """A dataset manifest or split request is malformed."""


class DivergenceError(HepadetError, RuntimeError):
    """Training produced a non-finite loss."""


class RoiError(HepadetError, ValueError):
    """A region of interest is empty or outside the image."""


class SizeGuardError(HepadetError, ValueError):
    """Input is too large for a brute-force reference routine."""
