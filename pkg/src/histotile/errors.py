"""Exception taxonomy shared across the pipeline.

The three bases map onto CLI exit codes: ConfigError -> 2,
MissingArtifactError -> 3, DataError -> 4.
"""


class HistotileError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HistotileError):
    """Bad configuration file, flag value, or config/flag combination."""


class MissingArtifactError(HistotileError):
    """A stage was asked to run before its upstream artifacts exist."""


class DataError(HistotileError):
    """Malformed or unsupported input data."""
