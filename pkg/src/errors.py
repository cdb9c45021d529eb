"""
Error Types Module

Exception hierarchy shared by the design library, the experiment bench
and the command-line front end.
"""

from typing import Optional


class MimoDualityError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MimoDualityError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalRankError(MimoDualityError, ValueError):
    """A matrix that must be invertible is numerically singular."""


class SingularCovarianceError(MimoDualityError, ArithmeticError):
    """A receiver covariance is too ill-conditioned to solve against."""

    def __init__(self, message: str, user: Optional[int] = None):
        super().__init__(message)
        self.user = user


class DegenerateTransferError(MimoDualityError, ArithmeticError):
    """A duality transfer scale has a vanishing numerator or denominator."""


class DegenerateDecompositionError(MimoDualityError, ArithmeticError):
    """A precoder or power vector cannot be split into direction and power."""


class FixedPointConvergenceError(MimoDualityError, RuntimeError):
    """A dual-noise fixed-point iteration ran out of iterations."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class GpInfeasibleError(MimoDualityError, RuntimeError):
    """Phase I could not find a strictly feasible point of a GP."""

    def __init__(self, message: str, constraint_index: int, violation: float):
        super().__init__(message)
        self.constraint_index = constraint_index
        self.violation = violation


class GpIterationError(MimoDualityError, RuntimeError):
    """The barrier method stalled or exceeded its Newton iteration cap."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class PowerFeasibilityError(MimoDualityError, RuntimeError):
    """A designed precoder violates its power constraint family."""

    def __init__(self, message: str, family: str, violation: float):
        super().__init__(message)
        self.family = family
        self.violation = violation


class SolveError(MimoDualityError, RuntimeError):
    """A sub-operation failed inside the outer design loop."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(MimoDualityError, ValueError):
    """An experiment configuration file is malformed."""

    def __init__(self, message: str, source: Optional[str] = None, key: Optional[str] = None):
        prefix = f"{source}: " if source else ""
        super().__init__(f"{prefix}{message}")
        self.source = source
        self.key = key
