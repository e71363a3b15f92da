"""Exception types raised across the toolkit."""


class DetectorNetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DetectorNetError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(DetectorNetError, ValueError):
    """A configuration value or combination of values is invalid."""


class NumericError(DetectorNetError, ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


class GraphStateError(DetectorNetError, RuntimeError):
    """Autodiff tape or optimizer used in an invalid state."""


class FormatError(DetectorNetError, ValueError):
    """A file on disk does not match its documented layout."""


class DataError(DetectorNetError, ValueError):
    """Input data cannot support the requested operation."""


class IntegrityError(FormatError):
    """A checkpoint payload failed its integrity check."""
