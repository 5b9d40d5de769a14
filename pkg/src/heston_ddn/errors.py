"""Exception hierarchy shared across the toolkit."""


class HestonDdnError(Exception):
    """Base class for all toolkit errors."""


class NumericalError(HestonDdnError):
    """A computation produced a non-finite intermediate value."""


class TruncationError(NumericalError):
    """The quadrature tail estimate exceeds the configured tolerance."""


class GradientError(HestonDdnError):
    """A finite-difference sensitivity could not be computed."""


class CalibrationError(HestonDdnError):
    """All calibration starts failed to produce a finite solution."""


class ConfigError(HestonDdnError):
    """Invalid or unknown configuration keys/values."""


class DataFormatError(HestonDdnError):
    """A data file does not match the expected format."""
