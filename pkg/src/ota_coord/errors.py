"""Exception types shared across the coordination solvers."""


class CoordinationError(Exception):
    """Base class for solver failures."""


class SingularGram(CoordinationError):
    """Gram matrix of the selected channel columns is numerically singular."""


class NumericalInstability(CoordinationError):
    """A rank-one inverse downdate hit a pivot too small to trust."""


class NullProjection(CoordinationError):
    """Receiver is orthogonal to a device channel, so scaling that device needs infinite power."""

    def __init__(self, device: int):
        super().__init__(f"receiver is orthogonal to the channel of device {device}")
        self.device = device


class RootInfeasible(CoordinationError):
    """Tree descent cannot start because the all-devices root is not a usable setting."""


class NoFeasibleSetting(CoordinationError):
    """Exhaustive enumeration found no feasible setting; the instance is degenerate."""


class InstanceTooLarge(CoordinationError):
    """Device count exceeds the hard cap for exponential enumeration."""
