"""Exception hierarchy shared by all modules."""


class DelayBoundsError(Exception):
    """Base class for package errors."""


class NonFiniteState(DelayBoundsError, FloatingPointError):
    """Integration produced NaN/Inf (solution escaped to infinity)."""

    def __init__(self, message, time=None, index=None, state=None):
        super().__init__(message)
        self.time = time
        self.index = index
        self.state = state


class StepExceedsMinDelay(DelayBoundsError, ValueError):
    """Step size larger than the smallest delay, or a delayed query reached unsolved time."""


class OutOfDomain(DelayBoundsError, ValueError):
    """Trajectory evaluated outside [t0 - h_max, t_end]."""


class DefectiveMatrix(DelayBoundsError, ValueError):
    """Eigendecomposition failed the residual checks (repeated eigenvalues)."""


class UnsupportedNonlinearity(DelayBoundsError, TypeError):
    """No closed-form majorant is available for this nonlinearity."""


class MissingIterate(DelayBoundsError, IndexError):
    """Requested cascade depth exceeds what was computed."""


class MeshMismatch(DelayBoundsError, ValueError):
    """Two trajectories do not cover the same horizon."""


class NotHurwitz(DelayBoundsError, ValueError):
    """Constant matrix has an eigenvalue with nonnegative real part."""


class NoExceedanceFound(DelayBoundsError):
    """Radial search stayed inside the region up to the maximal radius."""


class SeedExceeded(DelayBoundsError):
    """Radial search found the seed radius already outside the region."""


class ConfigError(DelayBoundsError, ValueError):
    """Invalid run configuration."""
