"""Shared exception types.

Everything numeric that can fail on valid-looking input raises a
subclass of :class:`EosLabError`, so callers (and the command line
driver) can separate "the math said no" from genuine usage mistakes.
"""


class EosLabError(Exception):
    """Base class for numeric failures raised by this package."""


class NoFiniteMinimumError(EosLabError):
    """The loss has no finite minimizer (hard labels in cross entropy)."""


class InfeasibleInitError(EosLabError):
    """Requested (z0, s0) pair violates s0 >= 2 |z0|."""


class DivergenceError(EosLabError):
    """Iterates became non-finite or left the trusted region."""


class BelowThresholdError(EosLabError):
    """Learning rate is at or below the period-doubling threshold."""


class BracketingError(EosLabError):
    """No sign change found inside the search window."""

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class OutOfRangeError(EosLabError):
    """Requested point lies outside the bifurcation diagram's range."""


class ZeroAlphaError(EosLabError):
    """Prediction undefined because product-stability is not positive."""


class NonConvergenceError(EosLabError):
    """Iteration budget exhausted before the convergence test was met."""


class PowerIterationError(EosLabError):
    """Power iteration broke down (vanishing Hessian-vector product)."""


class ChartDataError(EosLabError):
    """CSV data cannot be charted (missing column, bad cell, no rows)."""
