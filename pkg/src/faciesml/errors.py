"""Exception hierarchy shared by the library and the command-line runner."""

from __future__ import annotations


class FaciesError(Exception):
    """Base class for every error raised deliberately by faciesml."""


class DataError(FaciesError, ValueError):
    """The input dataset is malformed or violates a record invariant."""


class SchemaError(DataError):
    """A required CSV column is missing."""

    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class ParseError(DataError):
    """A cell could not be converted to the expected type."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        super().__init__(message)


class ValidationError(ParseError):
    """A parsed value is outside its allowed domain."""


class UnknownWellError(DataError, KeyError):
    def __init__(self, well: str, available):
        self.well = well
        self.available = tuple(available)
        super().__init__(well)

    def __str__(self) -> str:
        return f"unknown well {self.well!r}; available wells: {', '.join(self.available)}"


class DegenerateFitError(DataError):
    """Too few points (or no spread in porosity) for a least-squares line."""


class ConfigError(FaciesError, ValueError):
    """An experiment, augmentation or model configuration is invalid."""


class ModelFormatError(FaciesError, ValueError):
    """A serialized model document cannot be decoded."""

    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(f"{path}: {message}")


class IncompatibleModelError(FaciesError, ValueError):
    """A model does not match the document version or the supplied features."""
