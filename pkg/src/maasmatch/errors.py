"""Exception types shared across the package."""


class MaasMatchError(Exception):
    """Base class for all package errors."""


class ModelValidationError(MaasMatchError):
    """A domain object violates one of its invariants."""


class EvaluationError(MaasMatchError):
    """An attribute utility could not be evaluated (e.g. unknown label)."""


class ContractRoutingError(MaasMatchError):
    """A contract was offered to a supplier it does not belong to."""


class InfeasibleProgramError(MaasMatchError):
    """No binary point satisfies the program's constraints."""


class SolverBudgetError(MaasMatchError):
    """The branch-and-bound node budget was exhausted before proving optimality."""


class BundleBudgetError(MaasMatchError):
    """Bundle enumeration for a supplier exceeded the configured cap."""


class AuditConfigError(MaasMatchError):
    """Audit inputs are inconsistent (wrong periods, missing bundle graph, ...)."""
