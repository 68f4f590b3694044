"""Exception types raised across the package."""


class VRSError(Exception):
    """Base class for all package errors."""


class ShapeError(VRSError, ValueError):
    """Array shapes do not match the model layout."""


class DomainError(VRSError, ValueError):
    """A value lies outside the support of a distribution."""


class BudgetExhausted(VRSError, RuntimeError):
    """The rejection sampler exceeded its per-sample attempt budget.

    Usually means the threshold is far too low for the current parameters.
    """

    def __init__(self, attempts, max_attempts, context=None):
        self.attempts = attempts
        self.max_attempts = max_attempts
        self.context = dict(context or {})
        msg = f"sampler budget exhausted after {attempts} attempts (max {max_attempts})"
        if self.context:
            msg += " " + ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(msg)

    def with_context(self, **context):
        return BudgetExhausted(self.attempts, self.max_attempts, {**self.context, **context})


class OracleError(VRSError, ArithmeticError):
    """An exact oracle received a non-finite value or an oversized space."""


class NumericError(VRSError, ArithmeticError):
    """Training produced a non-finite gradient or parameter."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class FormatError(VRSError, ValueError):
    """A binary file is malformed."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ConfigError(VRSError, ValueError):
    """A configuration field is invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
