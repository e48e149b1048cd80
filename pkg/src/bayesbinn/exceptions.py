"""Exception types raised by this package."""


class ShapeError(ValueError):
    """An array argument has the wrong rank or incompatible dimensions."""


class DataFormatError(ValueError):
    """A data or checkpoint file is malformed; the message names the offset/line."""


class ConfigError(ValueError):
    """An experiment config is missing, malformed, or contains unknown keys."""


class OptimizerError(RuntimeError):
    """An optimizer step cannot proceed (e.g. non-finite gradient)."""


class StaleCacheError(RuntimeError):
    """A backward pass was given a cache that does not match the forward pass."""
