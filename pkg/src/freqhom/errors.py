"""Exception hierarchy shared by all modules."""


class FreqHomError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(FreqHomError, ValueError):
    pass


class ResolutionError(FreqHomError, ValueError):
    """A frequency grid cannot represent the requested operation."""


class AliasingError(FreqHomError, ValueError):
    pass


class BoundaryError(FreqHomError, ValueError):
    """Convolution would leak too much weight past the axis ends."""


class UnsupportedInputError(FreqHomError, ValueError):
    pass


class NormalizationError(FreqHomError, ValueError):
    pass


class ConfigError(FreqHomError, ValueError):
    pass


class FitError(FreqHomError, RuntimeError):
    """Raised when the damped least-squares iteration fails.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
