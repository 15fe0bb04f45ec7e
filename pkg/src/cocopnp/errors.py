"""Exception types shared across the package.

Validation errors cover bad configuration and contract violations that are
detectable before any numerics run.  Numerical errors cover failures that
surface mid-computation (divergence, non-convergence, exhausted restarts).
"""


class ValidationError(ValueError):
    """Raised for invalid configuration, shapes, or parameter ranges."""


class NumericalError(RuntimeError):
    """Raised when an iterative routine fails to produce a usable result."""
