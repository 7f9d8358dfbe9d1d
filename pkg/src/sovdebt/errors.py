"""Typed failures raised by the solvers.

Every solver failure derives from ``SolverError`` (CLI exit status 1); bad input
configuration raises ``ConfigError`` (exit status 2).
"""


class SolverError(Exception):
    """Base class for numerical failures"""

    exit_status = 1


class DomainError(SolverError, ValueError):
    """An argument lies outside the domain of the operation"""


class NoSolutionError(SolverError):
    """The value level r*eta exceeds H^max, so H(x, xi, p) = r*eta has no root"""


class BranchDegeneracyError(SolverError):
    """H_xi vanishes on the F- branch, the normal form is singular"""


class BracketError(SolverError):
    """A root could not be bracketed within the search cap"""


class InfeasibleError(SolverError):
    """No admissible constant strategy holds the debt ratio fixed"""


class InstabilityError(SolverError):
    """An iterate left the invariant box by more than round-off"""


class NonConvergenceError(SolverError):
    """An iteration hit its cap before reaching tolerance"""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = history or []


class ContinuationError(SolverError):
    """Residuals grew along the regularization ladder"""


class IntegrationError(SolverError):
    """The ODE integrator failed without reaching an event"""


class ConstructionError(SolverError):
    """The piecewise deterministic construction could not be completed"""


class SimulationError(SolverError):
    """A simulated path produced non-finite values"""


class ConfigError(Exception):
    """Invalid or missing configuration"""

    exit_status = 2
