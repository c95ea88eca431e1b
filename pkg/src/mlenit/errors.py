"""Exception hierarchy.

The CLI maps ``DataError`` to exit status 3 and ``NumericError`` to 4.
"""


class MlenitError(Exception):
    """Base class for all package errors."""


class DataError(MlenitError, ValueError):
    """Invalid input data: bad values, malformed files, schema violations."""


class DomainError(DataError):
    """A clinical value outside its admissible domain."""

    def __init__(self, message, field=None, row=None):
        super().__init__(message)
        self.field = field
        self.row = row


class ModelFormatError(DataError):
    """A serialized model that cannot be parsed or is internally inconsistent."""


class NumericError(MlenitError, ArithmeticError):
    """Numerical failure: non-finite loss, non-convergence."""


class ConvergenceError(NumericError):
    pass
