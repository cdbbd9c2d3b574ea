"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid model, loss, or experiment configuration."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class StateError(RuntimeError):
    """An object was used with state produced for a different configuration."""


class InputError(ValueError):
    """Malformed external input such as an unparsable CSV cell."""
