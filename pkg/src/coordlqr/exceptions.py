"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`CoordLQRError`, so callers (the CLI in particular) can separate
input problems from genuine bugs.
"""


class CoordLQRError(Exception):
    """Base class for all package errors."""


class ValidationError(CoordLQRError, ValueError):
    """Problem data violates a structural or definiteness requirement."""


class DimensionMismatch(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class QNotPSD(ValidationError):
    pass


class RNotPD(ValidationError):
    pass


class ZeroWeights(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class InnerMatrixSingular(CoordLQRError, ArithmeticError):
    """R + B'PB failed its Cholesky factorization."""


class NoConvergence(CoordLQRError, ArithmeticError):
    """A fixed-point iteration did not settle within its budget."""


class NotPositiveDefinite(CoordLQRError, ArithmeticError):
    pass


class ClosedLoopUnstable(CoordLQRError, ArithmeticError):
    pass


class HorizonExceeded(CoordLQRError, ValueError):
    pass


class SingularKKT(CoordLQRError, ArithmeticError):
    pass


class ProblemTooLarge(CoordLQRError, ValueError):
    pass


class ConfigError(CoordLQRError, ValueError):
    """Config file could not be parsed; ``where`` points at the offending spot."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)
