"""Exception types shared across the package."""


class SweepError(Exception):
    """Base class for all package errors."""


class InfeasiblePoint(SweepError):
    """Query point violates a polyhedral constraint beyond tolerance."""


class InfeasibleStart(SweepError):
    """Initial state is not inside the shifted constraint set."""


class NotInCone(SweepError):
    """Vector is not representable in the normal cone; carries the residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainViolation(SweepError):
    """Direction lies outside the domain of the normal-cone coderivative."""


class DependentGenerators(SweepError):
    """Active generators are linearly dependent where independence is required."""


class NumericalFailure(SweepError):
    """An iterative numerical routine did not converge within its budget."""


class NoConsistentDuals(SweepError):
    """No dual certificate consistent with the optimality system was found."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InconsistentSequence(SweepError):
    """Dual norms diverge along a refinement sequence after normalization."""


class NoFeasiblePattern(SweepError):
    """Every contact pattern of the corridor model was pruned as infeasible."""


class ConfigError(SweepError):
    """Problem configuration failed validation."""
