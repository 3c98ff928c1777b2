"""Exception hierarchy shared by every gmlab module."""


class GmlabError(Exception):
    """Base class for all gmlab errors."""


class ConfigError(GmlabError, ValueError):
    """Invalid user configuration (bad keys, bad values, violated stability bounds)."""


class ValidationError(ConfigError):
    """An object failed its construction-time invariants."""


class DomainError(GmlabError, ValueError):
    """A function was evaluated outside the range where it is defined."""


class IntegrationError(GmlabError, ArithmeticError):
    """Quadrature failed or produced a non-finite value."""


class ScheduleInconsistencyError(GmlabError, ArithmeticError):
    """A noise schedule implies a negative squared diffusion coefficient."""


class EvaluationError(GmlabError, ArithmeticError):
    """A field, density or generator produced a non-finite or underflowing value."""


class SingularityError(DomainError):
    """Rates diverge (mixture path evaluated at kappa -> 1)."""


class TrainingDivergedError(GmlabError, ArithmeticError):
    """Training loss exceeded the divergence threshold; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
