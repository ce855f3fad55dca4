"""Exception types raised across the package."""


class VdwLabError(Exception):
    """Base class for all package errors."""


class InvalidGridError(VdwLabError, ValueError):
    pass


class InvalidExtentError(VdwLabError, ValueError):
    pass


class CutoffClippedError(VdwLabError, ValueError):
    pass


class ResourceLimitError(VdwLabError, MemoryError):
    pass


class InvalidSystemError(VdwLabError, ValueError):
    pass


class InvalidDecompositionError(VdwLabError, ValueError):
    pass


class InvalidBasisError(VdwLabError, ValueError):
    pass


class InvalidInducedTypeError(VdwLabError, ValueError):
    pass


class DependencyMissingError(VdwLabError, ValueError):
    pass


class SupportOverlapError(VdwLabError, ValueError):
    pass


class GeometryError(VdwLabError, ValueError):
    pass


class ScreeningInapplicableError(VdwLabError, ValueError):
    pass


class DomainError(VdwLabError, ValueError):
    pass


class WindowError(VdwLabError, ValueError):
    pass


class ResolutionError(VdwLabError, ValueError):
    pass


class RiggingError(VdwLabError):
    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class DegenerateStateError(VdwLabError):
    pass


class DeflationError(VdwLabError):
    def __init__(self, message, leakage=None):
        super().__init__(message)
        self.leakage = leakage


class ConvergenceFailure(VdwLabError):
    """Iterative method stopped before meeting its tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class NotInvertibleError(VdwLabError):
    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


class WindowExitError(VdwLabError):
    pass


class BoostTooLargeError(VdwLabError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConfigError(VdwLabError, ValueError):
    """Scenario configuration failed validation."""
