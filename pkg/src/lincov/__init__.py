"""Maximum likelihood for Gaussian linear covariance models.

The package solves the score equations of the likelihood and of the dual
likelihood for covariance models that are linear subspaces of symmetric
matrices, using numerical homotopy continuation: witness sets are populated by
monodromy, certified by a trace test, and then carried to the data of interest
by parameter homotopies.  Closed-form estimators are provided for the model
classes where the ML degree is one.
"""
from .errors import (
    DegenerateDataError,
    IllConditionedError,
    InputError,
    LinCovError,
    ModelHashMismatch,
    NoOptimumError,
    NotPositiveDefiniteError,
    TrackingFailure,
    UnverifiedWitnessError,
)
from .symspace import (
    LinearModel,
    SymMatrix,
    inner_product,
    orth_complement,
    project_coords,
)

__version__ = "0.1.0"
