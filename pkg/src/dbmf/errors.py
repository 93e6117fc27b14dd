"""Exception hierarchy shared by every dbmf module."""


class DBMFError(Exception):
    """Base class for all dbmf errors."""


class ConfigError(DBMFError, ValueError):
    pass


class DimensionMismatch(DBMFError, ValueError):
    pass


class EmptyInput(DBMFError, ValueError):
    pass


class NotSPD(DBMFError, ValueError):
    """Raised when a Cholesky pivot is not strictly positive.

    Usually means the covariance is degenerate and needs a larger ridge.
    """


class DegenerateDistribution(DBMFError, ValueError):
    pass


class InvalidBandwidth(DBMFError, ValueError):
    pass


class InvalidK(DBMFError, ValueError):
    pass


class ZeroVector(DBMFError, ValueError):
    pass


class LabelOutOfRange(DBMFError, ValueError):
    pass


class InconsistentDim(DBMFError, ValueError):
    pass


class TooFewSamples(DBMFError, ValueError):
    pass


class OneClassOnly(DBMFError, ValueError):
    pass


class ParseError(DBMFError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDiverged(DBMFError, ArithmeticError):
    pass
