"""Exception types shared across the package."""


class EventNormError(Exception):
    """Base class for all package errors."""


class ValidationError(EventNormError, ValueError):
    """A value, configuration, or operation precondition is invalid."""


class FormatError(EventNormError, ValueError):
    """A serialized file is malformed (bad magic, version, payload, ...)."""
