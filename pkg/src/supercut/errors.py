"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Shapes, label ranges or file layout do not fit together."""


class ParseError(StructuralError):
    """A file could not be decoded.

    ``offset`` is the byte (or line) position where decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """A non-finite value showed up in a computation."""
