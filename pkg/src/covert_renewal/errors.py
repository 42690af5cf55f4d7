"""Exception hierarchy shared across the package."""


class CovertRenewalError(Exception):
    """Base class for all package errors."""


class DomainError(CovertRenewalError, ValueError):
    """A parameter lies outside the domain an operation accepts."""


class InfeasibleParameterError(CovertRenewalError, ValueError):
    """Parameters are well-formed but the requested configuration cannot run.

    The CLI maps this family (and its subclasses) to exit code 2.
    """


class RegularityError(InfeasibleParameterError):
    """The inter-arrival family fails the smoothness/support conditions.

    Attributes
    ----------
    report : RegularityReport
        The per-condition diagnostics that caused the failure.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfeasiblePlanError(InfeasibleParameterError):
    """The covertness/failure budgets leave too few packets at this N."""


class StabilityError(InfeasibleParameterError):
    """Queue service rate does not exceed the arrival rate."""


class UndefinedObservationError(CovertRenewalError, ValueError):
    """An observation has zero density under both hypotheses."""
