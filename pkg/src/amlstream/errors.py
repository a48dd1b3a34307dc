"""Shared exception types.

The CLI maps these onto distinct exit codes: configuration problems,
I/O problems (plain OSError), and data problems are kept separate so
scripted callers can branch on the failure class.
"""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PipelineError):
    """Invalid configuration: bad weights, unknown keys, zero counts."""


class DataError(PipelineError):
    """Bad input data: parse failures, empty or undersized datasets."""


class DegenerateClassError(DataError):
    """A training set containing only one label class."""


class NotFoundError(PipelineError):
    """Topic, blob, table, or model version does not exist."""


class AlreadyExistsError(PipelineError):
    """Attempt to create a resource that already exists."""


class OffsetRangeError(PipelineError):
    """Commit offset beyond the end of a partition."""


class SchemaMismatchError(PipelineError):
    """Feature schema or model width does not match the data."""


class TableSchemaError(DataError):
    """Row violates a table schema; carries the offending column name."""

    def __init__(self, column: str, message: str):
        self.column = column
        super().__init__(message)


class CorruptLogError(PipelineError):
    """Checksum mismatch inside an event-log segment."""
