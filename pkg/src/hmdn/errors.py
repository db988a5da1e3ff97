"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Dimension mismatch between operands; the message names both shapes."""


class DomainError(ValueError):
    """A coordinate or argument fell outside its valid domain."""


class SchemaError(ValueError):
    """A file did not match its declared schema (missing/unknown column, bad header)."""


class ParseError(ValueError):
    """A cell or line could not be parsed; the message carries row/column coordinates."""


class NumericError(RuntimeError):
    """A computation produced non-finite values (NaN/inf loss, overflowed matrix)."""
