"""Exception hierarchy shared by every stochlog module."""


class StochlogError(Exception):
    """Base class for all errors raised by the package."""


class ParamError(StochlogError, ValueError):
    """A parameter lies outside the range where an operation is defined."""


class DomainError(StochlogError, ValueError):
    """A value lies outside the effective domain of a function (e.g. j(r), r < 0)."""


class NonConvergence(StochlogError, RuntimeError):
    """An iterative solver missed its tolerance within the iteration budget.

    Attributes
    ----------
    residual : float
        Final residual reached by the solver.
    index : tuple or None
        Grid index of the offending entry when raised from a field operation.
    """

    def __init__(self, message, residual=float("nan"), index=None):
        super().__init__(message)
        self.residual = residual
        self.index = index


class GridMismatch(StochlogError, ValueError):
    """Two fields (or a field and an operator) live on different grids."""


class ZeroModeError(StochlogError, ValueError):
    """A negative-order homogeneous norm was requested for a field with a mean."""


class SummabilityError(StochlogError, ValueError):
    """The noise weights are not summable against the per-mode constants."""


class StabilityError(StochlogError, RuntimeError):
    """A time step produced non-finite values."""


class ReplayError(StochlogError, RuntimeError):
    """Realized Wiener increments needed for a replay are not available."""


class ConfigError(StochlogError, ValueError):
    """A run configuration failed validation; the message names the block."""


class MissingArtifact(StochlogError, FileNotFoundError):
    """A run directory lacks the manifest or a diagnostic file."""
