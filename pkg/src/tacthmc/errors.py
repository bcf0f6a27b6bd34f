"""Exception types raised across the package."""


class TactError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TactError, ValueError):
    pass


class UnsupportedTargetError(TactError, TypeError):
    pass


class UnsupportedDimensionError(TactError, ValueError):
    pass


class StepTooLargeError(TactError, RuntimeError):
    """The tempering variable left the well even after reflection."""


class DivergenceError(TactError, RuntimeError):
    """A chain produced a non-finite value.

    ``step`` is the index of the offending step and ``last_state`` the last
    state whose entries were all finite (may be ``None`` if unavailable).
    """

    def __init__(self, message, step=None, last_state=None):
        super().__init__(message)
        self.step = step
        self.last_state = last_state


class InsufficientDataError(TactError, ValueError):
    pass


class ConfigError(TactError, ValueError):
    """Configuration problem; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
