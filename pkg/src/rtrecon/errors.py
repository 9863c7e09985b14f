"""Exception types shared across the package.

CLI exit codes are attached to the classes so the command layer can map
failures without inspecting messages.
"""


class RtReconError(Exception):
    exit_code = 3


class ValidationError(RtReconError, ValueError):
    """Input violates a documented precondition."""


class SizingError(ValidationError):
    """A region (mask section, ACS block, window) is too small for the request."""


class GeometryError(ValidationError):
    """A GRAPPA kernel geometry is missing or cannot be calibrated."""


class NumericError(RtReconError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class FormatError(RtReconError, OSError):
    exit_code = 2


class SizeMismatchError(FormatError):
    """Payload is longer than the header dims imply."""


class TruncatedPayloadError(FormatError):
    """Payload is shorter than the header dims imply."""


class UnknownDTypeError(FormatError):
    pass


class GridTypeError(FormatError):
    """File holds a grid of the wrong kind (e.g. complex read as an image)."""
