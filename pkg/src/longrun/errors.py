"""Exception hierarchy shared by all solvers."""


class LongRunError(Exception):
    """Base class for every error raised by this package."""


class DomainError(LongRunError, ValueError):
    """Argument outside the admissible domain (e.g. p >= 1, CIR state <= 0)."""


class ConfigError(LongRunError, ValueError):
    """Malformed model configuration file."""


class AssumptionViolation(LongRunError, ValueError):
    """Model parameters violate a standing assumption of the solver."""


class SingularDelta(LongRunError, ZeroDivisionError):
    """q * rho'rho == 1, so the linearising exponent is undefined."""


class NegativeDiscriminant(LongRunError, ArithmeticError):
    """The closed-form square root has a negative argument."""


class NoStabilizingSolution(LongRunError, ArithmeticError):
    """The algebraic Riccati solver failed to find the stabilizing root."""


class SingularSystem(LongRunError, ArithmeticError):
    """Linear system is numerically singular."""


class BlowUp(LongRunError, ArithmeticError):
    """A Riccati flow exploded in finite time."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NoConvergence(LongRunError, ArithmeticError):
    """Iterative procedure did not converge."""


class NonPositiveEigenvector(LongRunError, ArithmeticError):
    """Discrete principal eigenvector changed sign."""


class QuadratureFailure(LongRunError, ArithmeticError):
    """Numerical integration did not converge."""


class Inconclusive(LongRunError, ArithmeticError):
    """Truncation diagnostics disagree; no decision possible."""


class RegionViolation(LongRunError, ValueError):
    """(q, rho'rho) outside the region where the decay constant exists."""


class StepTooCoarse(LongRunError, ArithmeticError):
    """Halving the ODE step changed the result beyond tolerance."""


class NoBracket(LongRunError, ArithmeticError):
    """No sign change found in the search interval."""


class DegenerateSample(LongRunError, ValueError):
    """Sample too small to estimate a standard error."""


class NonFiniteState(LongRunError, ArithmeticError):
    """Too many simulated paths produced non-finite values."""
