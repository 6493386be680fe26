"""Exception hierarchy shared by all modules."""


class HierGameError(Exception):
    """Base class for package errors."""


class InputError(HierGameError, ValueError):
    """Bad argument: wrong dimension, non-positive batch size, unknown name."""


class ConfigError(HierGameError, ValueError):
    """Invalid configuration or problem data (schedule guards, monotonicity)."""


class DomainError(HierGameError, ValueError):
    """Evaluation point outside the game's oracle domain X + r*B."""


class ConvergenceError(HierGameError, RuntimeError):
    """Iterative solver hit its iteration budget before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class NumericError(HierGameError, ArithmeticError):
    """Non-finite iterate produced by the solver."""

    def __init__(self, message, epoch=None, step=None):
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}" + ("" if step is None else f", inner step {step}")
        super().__init__(message + where)
        self.epoch = epoch
        self.step = step
