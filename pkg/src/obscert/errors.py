"""Exception types shared across the package."""

from __future__ import annotations


class ObscertError(Exception):
    """Base class for all package errors."""


class NonFiniteState(ObscertError):
    """A simulation produced a non-finite or guard-violating state.

    ``step`` is the sampling step at which the violation was detected;
    ``indices`` lists the offending batch members for batched simulations.
    """

    def __init__(self, step: int, indices=None, message: str | None = None):
        self.step = int(step)
        self.indices = [] if indices is None else [int(i) for i in indices]
        if message is None:
            message = f"non-finite or unphysical state at step {self.step}"
            if self.indices:
                message += f" (batch members {self.indices[:10]})"
        super().__init__(message)


class ResampleExhausted(ObscertError):
    def __init__(self, ids, attempts: int):
        self.ids = [int(i) for i in ids]
        self.attempts = attempts
        super().__init__(
            f"scenario(s) {self.ids[:10]} rejected {attempts} consecutive times"
        )


class InvalidParams(ObscertError):
    pass


class InsufficientScenarios(ObscertError):
    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(
            f"{available} scenario records available, {required} required"
        )


class ConfigError(ObscertError):
    """Invalid experiment configuration; ``path`` locates the bad field."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class CacheMismatch(ObscertError):
    pass


class BudgetExhausted(UserWarning):
    """Local search ran out of evaluations; carries the best point found."""

    def __init__(self, xi, p, cost):
        self.xi = xi
        self.p = p
        self.cost = cost
        super().__init__(f"evaluation budget exhausted (best cost {cost:.3e})")
