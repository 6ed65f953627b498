"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when input data violates a documented invariant."""


class ParseError(ValueError):
    """Raised when a document cannot be parsed at all."""
