"""Exception hierarchy shared by all solver modules."""


class PartitionError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PartitionError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(PartitionError, ValueError):
    """Invalid symmetry, coupling or run configuration."""


class ResolutionError(PartitionError, ValueError):
    """The grid is too coarse for the requested interval or partition."""


class GridMismatchError(PartitionError, ValueError):
    """Two grid functions live on different meshes."""


class DegenerateInputError(PartitionError, ValueError):
    """Input is the zero function where a nonzero one is required."""


class ConvergenceError(PartitionError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``last_iterate`` and ``residual`` carry the state at the point of failure.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ProjectionError(ConvergenceError):
    """The Nehari scale system could not be solved for the given state."""


class SegregationError(PartitionError, RuntimeError):
    """A component's support is not a single interval yet."""


class DegeneracyError(PartitionError, RuntimeError):
    """Cut optimisation drove an interval to zero width."""
