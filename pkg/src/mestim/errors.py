"""Exception types raised by the estimation engine and the command line."""


class MEstimationError(Exception):
    """Base class for all errors raised by :mod:`mestim`."""


class NonFiniteEvaluation(MEstimationError):
    """An estimating function produced NaN or infinite values."""


class SingularJacobian(MEstimationError):
    """The Jacobian of the summed estimating equations could not be inverted."""


class SingularBread(MEstimationError):
    """The bread matrix is numerically singular (non-identified system)."""


class NoConvergence(MEstimationError):
    """The root-finder hit its iteration cap.

    The best iterate seen and its residual are kept so callers can still
    report something useful.
    """

    def __init__(self, message, best=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


class DimensionMismatch(MEstimationError, ValueError):
    pass


class RankDeficientDesign(MEstimationError, ValueError):
    pass


class DomainError(MEstimationError, ValueError):
    pass


class DegenerateWeights(MEstimationError, ValueError):
    pass


class ConfigError(MEstimationError):
    """Problem with a model configuration file.

    ``line`` and ``key`` locate the offending entry when known.
    """

    def __init__(self, message, line=None, key=None):
        self.message = message
        self.line = line
        self.key = key
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key '{key}'")
        prefix = f"{', '.join(loc)}: " if loc else ""
        super().__init__(prefix + message)


class DataError(MEstimationError):
    """Malformed or incomplete CSV input."""
