"""Exception types shared across the package."""


class ConavError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ConavError):
    """A log-barrier term was evaluated at (or inside) an obstacle center."""


class ConvergenceError(ConavError):
    """An iterative solver ran out of iterations before reaching tolerance."""


class DegenerateDistribution(ConavError):
    """Every cell of a sampling grid fell outside the barrier domain."""


class SingularJacobian(ConavError):
    """The action-space Jacobian is too ill-conditioned to invert."""


class SolverFailure(ConavError):
    """The QP subproblem was unbounded or broke down numerically."""


class EmptyTrace(ConavError):
    """Metrics were requested for an episode trace with no samples."""


class ParseError(ConavError):
    """A scenario document is not structurally valid."""


class ValidationError(ConavError):
    """A scenario document parsed but violates a semantic constraint."""


class UnknownScenario(ConavError):
    """A session referenced a scenario name that is not registered."""


class SessionNotRunning(ConavError):
    """A command arrived for a session that is paused or finished."""
