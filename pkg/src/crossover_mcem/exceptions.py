"""Exception types raised across the package."""


class CrossoverError(Exception):
    """Base class for all package errors."""


class DesignError(CrossoverError, ValueError):
    """Invalid or non-identifiable crossover design."""


class ParameterError(CrossoverError, ValueError):
    """Parameter vector inconsistent with its design or out of range."""


class DataError(CrossoverError, ValueError):
    """Malformed trial data or dataset file."""


class CovarianceError(CrossoverError, ArithmeticError):
    """A covariance matrix is singular or not positive semi-definite."""


class FitError(CrossoverError, RuntimeError):
    """Model fitting or testing failed (non-convergence, non-nested fits, ...)."""
