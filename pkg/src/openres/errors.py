"""Exception hierarchy shared by all modules.

Each class maps to one CLI exit code (see :mod:`openres.cli`).
"""


class OpenResError(Exception):
    """Base class for all package errors."""


class SpecificationError(OpenResError, ValueError):
    """Invalid system specification or malformed input."""


class ConsistencyError(OpenResError, RuntimeError):
    """An internal numerical identity failed beyond tolerance."""


class NumericalPreconditionError(OpenResError, ValueError):
    """Input violates a numerical precondition (singular damping, exceptional point)."""


class ExceptionalPointError(NumericalPreconditionError):
    """Two resonances are numerically degenerate."""

    def __init__(self, pair, gap, threshold):
        self.pair = tuple(int(i) for i in pair)
        self.gap = float(gap)
        self.threshold = float(threshold)
        super().__init__(
            f"near-degenerate resonances {self.pair}: gap {self.gap:.3e} "
            f"<= threshold {self.threshold:.3e}"
        )


class ResolutionError(OpenResError, ValueError):
    """Time step too coarse or integration unstable."""

    def __init__(self, message, suggested_dt=None):
        self.suggested_dt = suggested_dt
        if suggested_dt is not None:
            message = f"{message} (suggested dt <= {suggested_dt:.6g})"
        super().__init__(message)


class ResourceError(OpenResError, MemoryError):
    """Requested storage exceeds the configured memory budget."""
