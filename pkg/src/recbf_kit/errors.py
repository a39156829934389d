"""Exception types shared across the toolkit."""


class RecbfError(Exception):
    """Base class for toolkit errors."""


class InvalidOrderError(RecbfError, ValueError):
    pass


class AssumptionViolation(RecbfError, ValueError):
    """A requested pole is not real, finite and strictly negative."""


class InvalidBoxError(RecbfError, ValueError):
    pass


class InfeasibleConstraint(RecbfError):
    """The actuator floor lies above the robust upper bound.

    Carries both numbers so the caller can log them and apply the floor.
    """

    def __init__(self, u_floor, u_max):
        super().__init__(f"u_floor={u_floor:.6g} exceeds robust bound u_max={u_max:.6g}")
        self.u_floor = u_floor
        self.u_max = u_max


class DegenerateParameterError(RecbfError, ValueError):
    pass


class UndefinedStopError(RecbfError, ValueError):
    """A maximum deceleration is non-negative, so a stopping distance does not exist."""


class NumericError(RecbfError, ArithmeticError):
    pass


class UnidentifiableError(RecbfError, ArithmeticError):
    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class ModelMismatchError(RecbfError):
    pass


class SimulationAbort(RecbfError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6f} s)")
        self.t = t


class ConfigError(RecbfError, ValueError):
    pass
