"""Exception hierarchy shared across the package."""


class AltrecoError(Exception):
    """Base class for all package errors."""


class DimensionError(AltrecoError):
    """Tensor or layer shapes are incompatible."""


class ContractError(AltrecoError):
    """A documented precondition or invariant was violated by the caller."""


class NumericError(AltrecoError):
    """A non-finite value appeared where only finite values are allowed."""


class DataError(AltrecoError):
    """Problems with corpus or checkpoint content."""


class ParseError(DataError):
    """A file could not be parsed; the message carries the location."""


class VocabularyError(DataError):
    """A tag string is unknown to the vocabulary in use."""


class FormatError(DataError):
    """A binary file does not carry the expected magic or version."""


class IntegrityError(DataError):
    """A binary file is truncated or its payload checksum does not match."""
