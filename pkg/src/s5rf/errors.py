"""Exception types shared across the package."""


class S5RFError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(S5RFError, ValueError):
    """A configuration value is out of range or inconsistent."""


class InvalidInputError(S5RFError, ValueError):
    """An input array or record has the wrong shape, range or ordering."""


class NumericFailureError(S5RFError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""

    def __init__(self, message, residual=None, diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics or {}
