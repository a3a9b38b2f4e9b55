class TASNNError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TASNNError, ValueError):
    """Invalid shapes, hyperparameters or configuration documents."""


class DataError(TASNNError, ValueError):
    """Malformed event data or sample-level problems."""


class ParseError(DataError):
    """A file could not be decoded; `location` is a byte offset or line number."""

    def __init__(self, message: str, location: int | None = None):
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location
