"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Invalid input data or parameters (bad shapes, non-finite values, broken invariants)."""


class StructuralError(ValidationError):
    """Malformed kinematic structure: bad parent index, cycle, or unrooted tree."""


class NonFiniteLossError(ValidationError):
    """The objective evaluated to NaN/inf; maps to the numerical-failure exit code."""


class SyncFailureError(RuntimeError):
    """Temporal alignment failed; carries which stream lacked a usable peak."""

    def __init__(self, stream: str, message: str):
        super().__init__(message)
        self.stream = stream


class GenerationError(RuntimeError):
    """Synthetic data generation produced an invalid bundle (e.g. scene interpenetration)."""
