"""Exception types shared across the pipeline.

The CLI maps each family to its own exit code, so callers should raise the
most specific class that applies.
"""


class MyoadaptError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(MyoadaptError, ValueError):
    """A filter, window, grid or model parameter is out of its legal range."""


class DataFormatError(MyoadaptError, ValueError):
    """A session or frame file does not match the expected layout.

    ``row`` is the zero-based data row where the problem was found, if known.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class NumericalError(MyoadaptError, ArithmeticError):
    """Non-finite inputs or a factorization that cannot proceed."""
