"""Exception types shared across the package."""


class UcpropError(Exception):
    """Base class for all package errors."""


class ResolutionError(UcpropError):
    """A requested ball, cube or scale is below what the grid can resolve."""

    def __init__(self, message="resolution exhausted"):
        super().__init__(message)


class PreconditionError(UcpropError, ValueError):
    """An operation was called outside its stated hypotheses."""


class DomainError(PreconditionError):
    """Parameters violate an inequality required by a formula."""


class ContractError(UcpropError):
    """An internal postcondition or input contract was violated."""


class ConstructionError(UcpropError, ValueError):
    """A coefficient recipe produced an inadmissible field."""


class SolverError(UcpropError):
    """Linear solve failed; carries iteration diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DisconnectedError(PreconditionError):
    """The region is not connected at the requested scale."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class ConfigError(UcpropError, ValueError):
    """Scenario configuration failed validation; ``violations`` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
