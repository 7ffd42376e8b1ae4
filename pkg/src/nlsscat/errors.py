"""Exception hierarchy shared by all modules."""


class NlsScatError(Exception):
    """Base class for library errors."""


class ParameterError(NlsScatError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class GridError(NlsScatError, ValueError):
    """Grid is too small or misaligned for the requested computation."""

    def __init__(self, message, tail_mass=None):
        self.tail_mass = tail_mass
        super().__init__(message)


class CoverageError(NlsScatError, ValueError):
    def __init__(self, message, windows=()):
        self.windows = list(windows)
        super().__init__(message)


class IntegrationError(NlsScatError, RuntimeError):
    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message)


class ConsistencyError(NlsScatError, RuntimeError):
    """Two routes to the same quantity disagree, or an exact identity failed."""

    def __init__(self, message, values=None):
        self.values = values
        super().__init__(message)


class DomainError(NlsScatError, ValueError):
    pass


class BoxSizeError(NlsScatError, RuntimeError):
    def __init__(self, message, leaked_mass):
        self.leaked_mass = leaked_mass
        super().__init__(message)


class GridAdequacyWarning(UserWarning):
    pass


class AccuracyWarning(UserWarning):
    """A quadrature tail estimate is large relative to the result."""
