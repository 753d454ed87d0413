"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PaicError(Exception):
    """Base class for all package errors."""


class ValidationError(PaicError):
    """Bad input: malformed files, dimension mismatches, out-of-range values."""


class NumericalError(PaicError):
    """A numeric computation produced a non-finite or unusable result."""


class SingularHessianError(NumericalError):
    """Hessian factorization failed even after ridge regularization."""


class NotPositiveDefiniteError(NumericalError):
    """A matrix required to be positive definite is not.

    Carries the offending eigenvalues in ``eigenvalues``.
    """

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class IllConditionedError(NumericalError):
    """Condition number above the trust threshold; result refused."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class NonConvergenceError(NumericalError):
    """Sampler diagnostics failed the convergence gate.

    Carries the full ``Diagnostics`` so the caller can decide to retry
    with a larger budget.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ImproperPriorError(PaicError):
    """Criterion undefined under a degenerate (improper) prior."""


class UnsupportedModelError(PaicError):
    """Operation only implemented for specific built-in models."""


class ExperimentError(PaicError):
    """Replication study failed (e.g. too many excluded replications)."""
