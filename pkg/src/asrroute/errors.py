"""Exception types shared across the package.

``ConfigError`` and ``DataFormatError`` signal bad user input (CLI exit
code 2); everything else maps to an internal failure (exit code 1).
"""


class AsrRouteError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AsrRouteError):
    """Invalid run or generator configuration supplied by the user."""


class DataFormatError(AsrRouteError):
    """A dataset, decisions, or model file violates its documented format."""


class SchemaMismatchError(AsrRouteError):
    """Feature vector or dataset does not match the schema a model expects."""


class ModelFormatError(AsrRouteError):
    """A model file is corrupted, truncated, or has an unsupported version."""
