"""Shared exception types."""


class NLBranchError(Exception):
    """Base class for all library errors."""


class DomainError(NLBranchError, ValueError):
    """An argument lies outside the admissible domain."""


class ValidationError(NLBranchError, ValueError):
    """A constructed object violates one of its invariants."""


class QuadratureError(NLBranchError, RuntimeError):
    """Numerical integration did not converge to the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NoJumpError(NLBranchError, ValueError):
    """The jump measure has no mass above the requested cutoff."""
