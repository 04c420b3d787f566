"""Exception hierarchy for causalqmle."""


class QMLEError(Exception):
    """Base class for all package errors."""


class ContractViolation(QMLEError, ValueError):
    """Inputs do not satisfy an operation's preconditions (shapes, bounds)."""


class NumericError(QMLEError, ArithmeticError):
    """Non-finite values produced during evaluation."""


class A2Violation(NumericError):
    """Conditional covariance is not positive definite or its determinant is below the floor."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DivergenceError(QMLEError):
    """A series, recursion or simulated path fails to converge."""


class ConstructionError(ContractViolation):
    """A model-family constructor received coefficients violating an invariant."""


class RegionError(QMLEError):
    """Parameter lies outside the stationarity region required by the operation."""


class VarViolation(NumericError):
    """Estimated information matrix is singular or not positive definite."""


class UnfittableError(QMLEError):
    """Every optimizer start failed."""


class ExperimentError(QMLEError):
    """A Monte Carlo experiment had too many failed replications; ``report`` holds what was collected."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
