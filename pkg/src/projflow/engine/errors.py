from typing import Sequence, Tuple


class ProjflowError(Exception):
    """Base class for every error raised by projflow."""


class DimensionError(ProjflowError, ValueError):
    pass


class ConeViolationError(ProjflowError, ValueError):

    def __init__(self, label: str, cells: Sequence[int]):
        self.label = label
        self.cells = list(cells)
        shown = self.cells[:10]
        more = "" if len(self.cells) <= 10 else f" (+{len(self.cells) - 10} more)"
        super().__init__(f"{label} must be strictly positive; offending cells {shown}{more}")


class DegenerateFieldError(ProjflowError, ValueError):
    pass


class DomainError(ProjflowError, ValueError):
    pass


class StepSizeError(ProjflowError, ArithmeticError):

    def __init__(self, time: float, h: float, reason: str = "overflow"):
        self.time = time
        self.h = h
        self.reason = reason
        super().__init__(f"{reason} at t={time:.6g} with h={h:g}; retry with a smaller step")


class ConvergenceError(ProjflowError, RuntimeError):

    def __init__(self, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(f"fixed-point iteration did not converge in {sweeps} sweeps (residual {residual:.3e})")


class SolverError(ProjflowError, RuntimeError):

    def __init__(self, message: str, bracket: Tuple[float, float]):
        self.bracket = bracket
        super().__init__(f"{message}; bracket {bracket}")


class ConfigError(ProjflowError, ValueError):
    pass
