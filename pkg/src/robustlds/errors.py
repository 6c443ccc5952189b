"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Vector or matrix shapes do not match the system dimension."""


class NumericOverflowError(ArithmeticError):
    """A state component became non-finite during a rollout.

    ``step`` is the index of the first non-finite state and ``trajectory``
    (when set) holds everything recorded before it.
    """

    def __init__(self, step, message=None, trajectory=None):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step
        self.trajectory = trajectory


class CertifiedOverflowError(OverflowError):
    """A certified exploration scale does not fit in a float64.

    ``log_value`` carries the natural log of the value that was requested.
    """

    def __init__(self, log_value, what="value"):
        super().__init__(f"{what} = exp({log_value:.6g}) exceeds the float64 range")
        self.log_value = log_value


class ControllerFailure(RuntimeError):
    """Unrecoverable internal failure of a controller (broken precondition)."""


class ControllerExhausted(ControllerFailure):
    """Cusumano-Poolla ran out of candidate controllers."""


class NetTooLarge(ValueError):
    """A net construction would exceed the configured size cap."""

    def __init__(self, size, cap):
        super().__init__(f"net size {size} exceeds cap {cap}")
        self.size = size
        self.cap = cap
