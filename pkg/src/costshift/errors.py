"""Exception types shared across the package.

Each class carries an exit code so the command line tool can map failure
categories to distinct process statuses.
"""


class CostShiftError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(CostShiftError):
    """Invalid configuration file, key, or value."""

    exit_code = 2


class DataFormatError(CostShiftError):
    """Malformed data file or inconsistent feature-set contents."""

    exit_code = 3


class ArtifactError(CostShiftError):
    """Missing, corrupt, or version-incompatible persisted artifact."""

    exit_code = 4


class ConvergenceError(CostShiftError):
    """An iterative solver failed to reach its tolerance."""

    exit_code = 5


class DegenerateInputError(CostShiftError):
    """Input on which the requested quantity is numerically undefined."""

    exit_code = 6


class GridSearchError(CostShiftError):
    """A parameter cell could not be scored on any cross-validation fold."""

    exit_code = 5


class EigenSolverError(CostShiftError):
    """Generalized eigensolution failed or did not satisfy residual checks."""

    exit_code = 7
