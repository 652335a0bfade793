"""Exception hierarchy shared by every ktrecon module.

Data errors (bad shapes, malformed files, invalid parameters) and numerical
failures (non-convergent SVD, diverged training) are kept apart so the CLI
can map them to distinct exit codes.
"""


class KtreconError(Exception):
    """Base class for all library errors."""


class DataError(KtreconError, ValueError):
    """Input data or parameters violate an operation's preconditions."""


class NumericalError(KtreconError, ArithmeticError):
    """A numerical routine failed to produce a usable result."""


class ShapeMismatch(DataError):
    pass


class ZeroVolume(DataError):
    pass


class MalformedFile(DataError):
    pass


class InvalidAcceleration(DataError):
    pass


class InvalidDensity(DataError):
    pass


class InvalidSpec(DataError):
    pass


class OddSpatialDim(DataError):
    pass


class ZeroReference(DataError):
    pass


class FrameTooSmall(DataError):
    pass


class EmptyRegion(DataError):
    pass


class SvdFailure(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class NonFiniteData(NumericalError):
    pass
