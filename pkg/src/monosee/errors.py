"""Shared exception types.

Everything numeric that can fail in a structured way raises one of these,
so the CLI can map failures to exit codes without string-matching.
"""


class MonoseeError(Exception):
    """Base class for package errors."""


class ConfigError(MonoseeError):
    """Invalid experiment configuration (unknown key, bad range, missing field)."""


class NonconvergenceError(MonoseeError):
    """An iterative solve ran out of iterations.

    Carries the residual history so callers can report or post-mortem it.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class RegressionError(MonoseeError):
    """Least-squares conditional-expectation fit is unusable (degenerate design)."""


class BlowupError(MonoseeError):
    """A comparison bound escaped its quadrature table before the requested time."""

    def __init__(self, message, blowup_time):
        super().__init__(message)
        self.blowup_time = blowup_time
