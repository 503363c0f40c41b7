"""Exception types shared across the package."""


class SbmlabError(Exception):
    """Base class for all package errors."""


class DomainError(SbmlabError, ValueError):
    """Argument outside the mathematical domain of an evaluator."""


class OutOfRangeError(SbmlabError, ValueError):
    """Argument inside the domain but outside the supported numerical range."""

    def __init__(self, msg, last_value=None):
        super().__init__(msg)
        self.last_value = last_value


class ConvergenceError(SbmlabError, RuntimeError):
    """A quadrature or iteration failed to meet its tolerance."""

    def __init__(self, msg, estimate=None, error=None):
        super().__init__(msg)
        self.estimate = estimate
        self.error = error


class NumericalBlowupError(SbmlabError, FloatingPointError):
    """A time-stepping scheme produced a non-finite state."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class HorizonTooShortError(SbmlabError, RuntimeError):
    """A path was too short for its time integral to converge."""

    def __init__(self, msg, tail_mass=None):
        super().__init__(msg)
        self.tail_mass = tail_mass


class InsufficientResolutionError(SbmlabError, RuntimeError):
    """Not enough grid points for a regression or estimator."""


class InsufficientSampleError(SbmlabError, RuntimeError):
    """Too few (effective) samples for a statistical estimate."""


class ResourceError(SbmlabError, RuntimeError):
    """A simulation exceeded its work or memory budget."""


class ConfigError(SbmlabError, ValueError):
    """Invalid experiment configuration."""
