"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`KFPError`.
Validation problems (bad operator files, bad shapes, bad parameters) also
derive from :class:`ValueError` so that callers can catch them generically.
"""


class KFPError(Exception):
    """Base class for library errors."""


class ValidationError(KFPError, ValueError):
    """Invalid input data (structure, parameters, configuration)."""


# geometry
class RankDeficient(ValidationError):
    pass


class MonotonicityViolated(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonpositiveLambda(ValidationError):
    pass


class BoxTooSmall(ValidationError):
    pass


# kernel
class EllipticityViolated(ValidationError):
    pass


class NotAfterPole(ValidationError):
    pass


class SingularCovariance(KFPError, ArithmeticError):
    pass


class QuadratureNotConverged(KFPError, ArithmeticError):
    pass


# solvers
class SupportNotCompact(ValidationError):
    pass


class UnsupportedCoefficients(ValidationError):
    pass


class GridIncompatible(ValidationError):
    pass


class ZeroData(ValidationError):
    pass


class HolderSeminormUnbounded(ValidationError):
    pass


class EmptyBank(ValidationError):
    pass


# maximal estimates
class EmptyLadder(ValidationError):
    pass


class RadiusExceedsBox(ValidationError):
    pass


class KTooSmall(ValidationError):
    pass


# configuration / IO
class ConfigParse(ValidationError):
    pass


class SpecInvalid(ValidationError):
    pass


class IOFailure(KFPError, OSError):
    pass


class ExpressionError(ValidationError):
    pass
