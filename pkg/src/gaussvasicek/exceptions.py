"""Exception hierarchy shared by all modules."""


class GaussVasicekError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GaussVasicekError, ValueError):
    """A parameter or configuration value lies outside its admissible range."""


class DomainError(GaussVasicekError, ValueError):
    """A function was evaluated outside the region where it is defined."""


class SharedJumpError(GaussVasicekError, ValueError):
    """Integrand and integrator jump at the same point of (0, T]."""


class IoError(GaussVasicekError, OSError):
    """A configuration or data file could not be read."""


class NonConvergence(GaussVasicekError, ArithmeticError):
    """A refinement ladder was exhausted before meeting its tolerance."""


class NotPSDError(GaussVasicekError, ArithmeticError):
    """Cholesky factorization failed even after the jitter ladder."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class OverflowGuardError(GaussVasicekError, OverflowError):
    """An exponential factor would leave the representable range."""


class DegenerateDenominatorError(GaussVasicekError, ZeroDivisionError):
    """The least-squares denominator vanishes (e.g. a constant path)."""


class MuUndefinedError(GaussVasicekError, ZeroDivisionError):
    """theta_hat is exactly zero, so mu_hat = alpha_hat / theta_hat is undefined."""


class ExperimentInvalid(GaussVasicekError, RuntimeError):
    """Too many replications of a Monte Carlo experiment were degenerate."""


#: errors that the CLI maps to the "numerical failure" exit code
NUMERICAL_ERRORS = (NonConvergence, NotPSDError, OverflowGuardError, ExperimentInvalid)
