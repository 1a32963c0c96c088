"""Exception hierarchy shared across the package."""


class PlabError(Exception):
    """Base class for all errors raised by plab."""


class DimensionError(PlabError):
    """Tensor shapes do not satisfy an operation's requirements."""


class ParameterError(PlabError):
    """A numeric parameter is outside its allowed range."""


class ArgumentError(PlabError):
    """A call argument is invalid (wrong label, empty collection, ...)."""


class ConfigError(PlabError):
    """A configuration value cannot be parsed or resolved."""


class FormatError(PlabError):
    """A file does not conform to its on-disk format."""


class NumericalError(PlabError):
    """A computation produced non-finite values."""
