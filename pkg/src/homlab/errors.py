"""Exception taxonomy shared by all modules.

Three failure families, mirrored by the CLI exit codes and the service's
HTTP mapping: invalid inputs (exit 1), runtime limits (exit 2), and
optimizer/search failures (exit 3).
"""


class HomlabError(Exception):
    """Base class for all toolkit errors."""


# --- invalid inputs -------------------------------------------------------

class InvalidParamsError(HomlabError):
    """A parameter or argument violates its documented constraint."""


class ScenarioError(HomlabError):
    """A scenario file failed to parse or validate."""


class GridError(HomlabError):
    """A time grid is too coarse, too short, non-uniform, or mismatched."""


class FileFormatError(HomlabError):
    """An on-disk artifact is corrupt: bad magic, unsorted, or truncated."""


# --- runtime limits -------------------------------------------------------

class RegimeError(HomlabError):
    """Requested simulation parameters leave the validity regime."""


class CapacityError(HomlabError):
    """Expected event volume exceeds the configured cap."""


# --- optimizer / search failures -----------------------------------------

class NonConvergenceError(HomlabError):
    """An iterative fit stopped before meeting its convergence criteria."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result  # partial fit state, when available


class SingularNormalMatrixError(NonConvergenceError):
    """The least-squares normal matrix is rank deficient.

    ``direction`` holds the unit vector of the flat parameter combination
    (same ordering as the free-parameter vector).
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NoInteriorMaximumError(HomlabError):
    """A bracketed 1-D search ended on the bracket boundary."""
