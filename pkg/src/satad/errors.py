"""Exception types raised across the package."""


class SatadError(Exception):
    """Base class for every error raised by satad."""


class ShapeError(SatadError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SatadError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(SatadError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ParseError(SatadError, ValueError):
    """Base class for CSV ingestion errors."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingFileError(ParseError, FileNotFoundError):
    pass


class RaggedRowError(ParseError):
    pass


class NonNumericError(ParseError):
    pass


class UnknownLabelError(ParseError):
    pass


class CheckpointError(SatadError):
    """Base class for model and cache file loading errors."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class DivergenceError(SatadError, FloatingPointError):
    """A training loss or inversion objective became non-finite."""
