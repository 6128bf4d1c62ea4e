"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the split between
configuration, data and numerical failures meaningful.
"""


class GshapeError(Exception):
    """Base class for all package errors."""


class ConfigError(GshapeError):
    """Invalid or inconsistent configuration input."""


class DataError(GshapeError):
    """Invalid input data (lattice mismatch, bad responsibilities, IO)."""


class LatticeMismatch(DataError):
    """Two fields that must share a lattice do not."""


class SingularSystem(GshapeError):
    """A linear system that must be invertible is (numerically) singular."""


class SolverNotConverged(GshapeError):
    """An iterative solver hit its iteration cap before its tolerance.

    Carries the final relative residual so callers can report it.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonFiniteState(GshapeError):
    """NaN/Inf appeared in a field or posterior; state is unusable."""
