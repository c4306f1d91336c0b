"""Exception types shared across the package."""

from __future__ import annotations


class InvalidParameterError(ValueError):
    """A policy-family parameter is outside its legal range or shape."""


class PolicyValidationError(ValueError):
    """A policy violates the physical constraints of its system."""

    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__("invalid policy: " + "; ".join(self.violations))


class ZeroProbabilityError(RuntimeError):
    """The observed sequence has probability zero under the evaluating policy."""

    def __init__(self, step: int, which: str = "marginal"):
        self.step = step
        self.which = which
        super().__init__(
            f"observation at step {step} has zero {which} probability under this policy"
        )


class ConvergenceError(RuntimeError):
    """An iterative numerical routine failed to reach its tolerance."""

    def __init__(self, message: str, *, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{message} (iterations={iterations}, residual={residual:.3e})"
        )


class EnumerationSizeError(ValueError):
    """An exact enumeration would exceed the configured budget."""


class EvaluationError(RuntimeError):
    """A policy evaluation failed; carries the offending parameters."""

    def __init__(self, params, cause: Exception):
        self.params = params
        super().__init__(f"evaluation failed for params={params!r}: {cause}")


class ConfigError(ValueError):
    """An experiment configuration is malformed or out of range."""
