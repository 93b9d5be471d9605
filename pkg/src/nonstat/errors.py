"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: data problems exit with 3, numerical
failures with 4.
"""


class NonstatError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(NonstatError, ValueError):
    """A precondition on an argument was violated."""


class DegenerateGeometryError(NonstatError):
    """Sites are collinear or otherwise unusable for tessellation."""


class NoNeighborsError(NonstatError):
    """No site has a neighbor within the chosen radius."""


class DegenerateLagError(NonstatError):
    """Two lag classes have the same mean distance."""


class DegenerateClusterError(NonstatError):
    """A subregion has zero variance, so its likelihood is undefined."""


class ConstraintViolationError(NonstatError):
    """A subregion holds fewer sites than the minimum count."""


class UndefinedStatisticError(NonstatError):
    """The two-sample statistic has a zero denominator."""


class NumericalError(NonstatError):
    """Factorization or linear-algebra failure."""


class ConvergenceError(NonstatError):
    """An iterative solver hit its iteration cap.

    ``diagnostics`` carries whatever residuals or best-so-far values the
    solver had when it stopped.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(NonstatError):
    """Malformed input file."""


class FetchError(NonstatError):
    """Remote data could not be retrieved and no cache exists."""


class IntegrityError(NonstatError):
    """Cached data does not match its recorded checksum."""


class DomainError(NonstatError, ValueError):
    """A covariance model is undefined at some site."""
