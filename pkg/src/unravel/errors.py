"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, I/O failures exit 4.
"""


class UnravelError(Exception):
    """Base class for all package-specific errors."""


class DomainTooSmallError(UnravelError):
    """A state's support reaches the grid margin (or would, after a shift)."""


class DegenerateStateError(UnravelError):
    """An operation received or produced a state with vanishing norm."""


class UnsupportedNormalizationError(UnravelError):
    """Closed-form results are transcribed for hbar = m = D = 1 only."""


class InsufficientStatisticsError(UnravelError):
    """An estimator was asked to run on too few samples."""
