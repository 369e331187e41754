"""Exception types shared across the toolkit."""

from __future__ import annotations


class DomainError(ValueError):
    """A precondition on arguments or supports is violated."""


class UnsupportedExprError(ValueError):
    """A symbolic term falls outside the closed-form transform rules.

    Callers are expected to fall back to the numeric transform path.
    """


class AccuracyError(RuntimeError):
    """Quadrature failed to reach its accuracy target.

    Carries the best available estimate so callers can degrade gracefully.
    """

    def __init__(self, message: str, best_estimate: float | None = None,
                 error_estimate: float | None = None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate


class KreinConditionError(DomainError):
    """The logarithmic-integral hypothesis needed for a construction fails."""

    def __init__(self, message: str, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class SpecFormatError(ValueError):
    """A JSON density specification is malformed."""
