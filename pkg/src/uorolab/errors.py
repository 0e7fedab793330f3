"""Shared exception types."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid dimensions."""


class NotSymmetricError(ValueError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be PSD/PD has a genuinely negative eigenvalue."""


class SingularMatrixError(ValueError):
    """A matrix that must be invertible is singular (or numerically so)."""


class UnsupportedCutError(ValueError):
    """The requested cut vertex is not available for this cell/operation."""


class SizeGuardError(ValueError):
    """A dense-oracle operation was requested beyond its size guard."""


class NumericOverflowError(FloatingPointError):
    """A recursion produced non-finite values; message names the step."""


class IdxFormatError(ValueError):
    """An IDX file is malformed.  Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
