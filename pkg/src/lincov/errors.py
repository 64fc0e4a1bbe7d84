"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: bad input -> 1, numerical failure -> 2,
degenerate data -> 3.
"""


class LinCovError(Exception):
    """Base class for all package-specific errors."""


class InputError(LinCovError, ValueError):
    """Malformed user input: dimension mismatch, asymmetry, bad file format."""


class IllConditionedError(LinCovError):
    """A Gram or Jacobian matrix is too ill-conditioned to trust."""


class NotPositiveDefiniteError(LinCovError):
    """A matrix required to be positive definite is not."""


class DegenerateDataError(LinCovError):
    """Sample data is degenerate for the requested operation (e.g. singular S)."""


class TrackingFailure(LinCovError):
    """A continuation path could not be completed."""


class UnverifiedWitnessError(LinCovError):
    """A witness set failed trace-test verification."""


class NoOptimumError(LinCovError):
    """No positive definite critical point was found."""


class ModelHashMismatch(InputError):
    """A stored witness does not match the model it claims to describe."""
