"""Exception types shared across the simulator."""


class MimoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MimoError):
    """Invalid configuration. Carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GeometryError(MimoError):
    """User drop could not be completed (degenerate cell geometry)."""


class EstimationError(MimoError):
    """Channel estimation failed (singular training correlation matrix)."""


class NumericalError(MimoError):
    """A linear solve produced a residual beyond the accepted bound."""


class ConvergenceError(MimoError):
    """An iterative solver did not converge within its iteration cap."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FeasibilityError(MimoError):
    """A power-allocation instance is infeasible."""

    def __init__(self, message, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius
