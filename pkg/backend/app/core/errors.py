"""
Exception hierarchy for band selection.

Each error also derives from the builtin a caller would naturally catch,
so ``except ValueError`` keeps working around library calls.
"""
from typing import Optional


class BandSelectionError(Exception):
    """Base class for every error raised by this package"""


class DimensionError(BandSelectionError, ValueError):
    """Cube file size does not match its declared dimensions"""


class FormatError(BandSelectionError, ValueError):
    """Malformed ground truth, header, model or trace file"""


class ParameterError(BandSelectionError, ValueError):
    """Argument value outside its allowed range"""


class DomainError(BandSelectionError, ValueError):
    """Mathematical precondition violated (empty histogram, Nc < 2, ...)"""


class SelectionAborted(BandSelectionError):
    """
    Raised when the wrapper loop cannot continue.

    The partial result (retained bands and trace so far) travels with the
    exception so long sweeps keep what they already computed.
    """

    def __init__(self, message: str, partial=None, cause: Optional[BaseException] = None):
        super().__init__(message)
        self.partial = partial
        self.cause = cause
