"""Exception hierarchy shared across the package."""


class SegliftError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(SegliftError):
    """A required file is missing or cannot be parsed. Message names the file."""


class ValidationError(SegliftError):
    """Data violates a structural invariant (bad rotation, box out of bounds, ...)."""


class ConfigError(ValidationError):
    """Configuration values are inconsistent with the requested operation."""


class InvalidDepthError(ValidationError):
    """A non-positive depth was supplied where a valid depth is required."""
