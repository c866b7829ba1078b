"""Exception types raised across the package."""


class PESTalkError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(PESTalkError, ValueError):
    pass


class TooShort(PESTalkError, ValueError):
    pass


class BadDims(PESTalkError, ValueError):
    pass


class NumericalError(PESTalkError, ArithmeticError):
    pass


class EmptySpeaker(PESTalkError, ValueError):
    pass


class MissingBase(PESTalkError, KeyError):
    pass


class ZeroVector(PESTalkError, ValueError):
    pass


class EmptyLibrary(PESTalkError, ValueError):
    pass


class FormatError(PESTalkError, ValueError):
    """Malformed file. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadPartition(PESTalkError, ValueError):
    pass


class BadLabel(PESTalkError, ValueError):
    pass


class BadPairing(PESTalkError, ValueError):
    pass


class BadMask(PESTalkError, ValueError):
    pass


class BadBasis(PESTalkError, ValueError):
    pass


class SingularSystem(PESTalkError, ArithmeticError):
    pass


class DegenerateTriangle(PESTalkError, ValueError):
    pass


class IncompatibleCheckpoint(PESTalkError, ValueError):
    pass


class IoError(PESTalkError, OSError):
    pass
