"""Exception types shared across the package."""


class GumbelMaskError(Exception):
    """Base class for all package errors."""


class DimensionError(GumbelMaskError):
    """Array shapes do not satisfy an operation's geometry."""


class ContractError(GumbelMaskError):
    """An API precondition was violated by the caller."""


class ConfigError(GumbelMaskError):
    """A configuration value is outside its legal range."""


class InputError(GumbelMaskError):
    """Input data is malformed (e.g. labels out of range)."""


class FormatError(GumbelMaskError):
    """A file does not match its expected binary layout."""


class NumericalError(GumbelMaskError):
    """Training aborted on a non-finite quantity."""
