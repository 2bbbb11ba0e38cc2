class ValidationError(ValueError):
    """Input outside the documented domain. CLI exit code 2."""


class ZeroTailError(ValidationError):
    """The threshold v leaves no probability mass (or no samples) in the tail."""


class GuardExceededError(RuntimeError):
    """A desk-scale guard (state count, schedule length, fixed-point range) was exceeded. Exit code 3."""


class StatisticalAcceptanceError(RuntimeError):
    """An estimate fell outside its declared tolerance. Exit code 4."""
