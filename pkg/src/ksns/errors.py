"""Exception types shared across the solver stack."""


class KsnsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(KsnsError, ValueError):
    """A caller-supplied argument is outside the operation's domain."""


class ConfigError(KsnsError, ValueError):
    """Configuration file or config object is invalid; names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class SolverDivergenceError(KsnsError, RuntimeError):
    """An iterative solve failed to reach tolerance within its iteration cap."""

    def __init__(self, message, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class StepRejectedError(KsnsError, RuntimeError):
    """A time step violated its stability/positivity precondition."""

    def __init__(self, message, dt_suggested):
        self.dt_suggested = dt_suggested
        super().__init__(f"{message}; retry with dt <= {dt_suggested:.3e}")


class PositivityError(KsnsError, RuntimeError):
    """A field that must stay nonnegative dipped below the round-off band."""


class NumericalBreakdownError(KsnsError, RuntimeError):
    """NaN or Inf appeared in a state field; names the field."""

    def __init__(self, field_name):
        self.field_name = field_name
        super().__init__(f"non-finite values in field '{field_name}'")
