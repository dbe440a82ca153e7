"""Exception types raised across the package."""


class TimeShiftError(Exception):
    """Base class for all package errors."""


class ConfigError(TimeShiftError, ValueError):
    """A configuration value violates its precondition."""


class UndefinedRatioError(TimeShiftError, ZeroDivisionError):
    """Both detectors have zero click probability."""


class UnbalanceableError(TimeShiftError, ValueError):
    """Both shifts favor the same bit value, so no p_A equalizes the counts."""


class InsufficientDataError(TimeShiftError, ValueError):
    pass


class NoBreachError(TimeShiftError):
    """No candidate shift pair yields K_L > K_U."""


class EmptyCellError(TimeShiftError, ValueError):
    pass


class InversionError(TimeShiftError, ValueError):
    """The decoy channel model cannot be inverted for the given gain."""


class FixtureMissingError(TimeShiftError, FileNotFoundError):
    pass
