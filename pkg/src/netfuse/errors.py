"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario or model configuration.

    ``field`` names the offending configuration entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A bound recursion or factorization left its admissible region."""

    def __init__(self, message, min_eig=None):
        self.min_eig = min_eig
        if min_eig is not None:
            message = f"{message} (min eigenvalue {min_eig:.3e})"
        super().__init__(message)


class AlignmentError(ValueError):
    """Trajectories or filter records refer to different time indices."""


class DelayBoundError(ValueError):
    """A delay outside ``[0, N]`` reached an operation that requires it."""


class StaleMeasurementError(ValueError):
    """A measurement older than the filter's last processed timestamp."""


class NumericalWarning(RuntimeWarning):
    """Emitted when a matrix is regularized to keep a batch run alive."""
