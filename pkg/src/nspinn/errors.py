class NSPinnError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(NSPinnError, ValueError):
    pass


class UnsupportedOrderError(NSPinnError, ValueError):
    pass


class HypothesisError(NSPinnError, ValueError):
    """A parameter lies outside the range where a formula is valid."""


class HypothesisWarning(UserWarning):
    pass


class NonFiniteError(NSPinnError, FloatingPointError):
    """A NaN or inf showed up; ``terms`` names the offending pieces."""

    def __init__(self, message, terms=None, point=None):
        super().__init__(message)
        self.terms = tuple(terms or ())
        self.point = point


class ConfigError(NSPinnError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CheckpointError(NSPinnError, ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
