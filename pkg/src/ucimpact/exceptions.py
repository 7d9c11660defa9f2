"""Exception hierarchy shared across ucimpact."""


class UCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UCError, ValueError):
    """Invalid user configuration (column maps, CLI config, event windows)."""


class DataError(UCError, ValueError):
    """Input data violates a structural requirement (duplicates, gaps)."""


class DomainError(UCError, ValueError):
    """A value is outside the mathematical domain of an operation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RangeError(UCError, IndexError):
    """Requested range lies outside the available span."""


class SpecError(UCError, ValueError):
    """Invalid model specification."""


class InsufficientDataError(UCError, ValueError):
    """Not enough usable observations for the requested operation."""


class DegenerateInputError(UCError, ValueError):
    """Input is degenerate for the statistic (zero variance, zero denominator)."""


class NumericalFailure(UCError, ArithmeticError):
    """Numerical breakdown, e.g. a non-positive innovation variance."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(UCError, RuntimeError):
    """Every optimizer start failed; ``best`` holds the best incumbent."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ComparisonError(UCError, ValueError):
    """Fits being compared were estimated on different samples."""


class NotFittedError(UCError, AttributeError):
    """Estimator used before ``fit``."""
