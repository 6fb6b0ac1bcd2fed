"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 1, numerical
trouble (non-convergence, table/re-run mismatches) exits 2, and I/O or
checkpoint corruption exits 3.
"""


class NrdfError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NrdfError):
    """Invalid probabilities, shapes, parameters, or configuration."""


class ShapeError(ValidationError):
    """Operands with incompatible dimensions."""


class SupportViolationError(ValidationError):
    """A policy places mass on an output symbol with zero marginal probability."""


class GridTooLargeError(ValidationError):
    """Requested belief grid exceeds the configured point cap."""


class TableSizeError(ValidationError):
    """Backward tables would exceed the configured memory cap."""


class ConsistencyError(NrdfError):
    """Forward re-run disagrees with stored backward tables."""


class ConvergenceError(NrdfError):
    """A computation failed to converge where convergence is required."""


class TableIOError(NrdfError):
    """Checkpoint file is unreadable, truncated, corrupt, or version-incompatible."""
