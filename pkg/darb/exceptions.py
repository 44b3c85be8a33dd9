"""Error hierarchy shared by every darb module."""


class DarbError(Exception):
    """Base class for all simulator and optimizer failures."""


class DomainError(DarbError, ValueError):
    """An operation was called outside its mathematical domain."""


class ConfigError(DarbError, ValueError):
    """A configuration file, override or model field is invalid."""


class QuadratureError(DarbError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested accuracy."""

    def __init__(self, message: str, value: float = float("nan"),
                 error_estimate: float = float("nan"), params: dict | None = None):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate
        self.params = params or {}

    def __str__(self) -> str:
        base = super().__str__()
        return f"{base} (value={self.value:.6g}, error_estimate={self.error_estimate:.3g}, params={self.params})"


class InfeasibleSubproblemError(DarbError, RuntimeError):
    """A 1-D optimizer subproblem has no point with a positive rate.

    `trace` holds the iteration records accumulated before the failure.
    """

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = list(trace or [])
