"""Exception hierarchy shared by all tsat modules.

User-input problems (bad files, bad parameters) derive from ``InputError`` so
the CLI can map them to exit code 2; everything else is an internal error.
"""


class TsatError(Exception):
    pass


class InputError(TsatError):
    """Raised for problems caused by the caller's data or arguments."""


class DimensionError(InputError, ValueError):
    pass


class ParameterError(InputError, ValueError):
    pass


class ConfigError(InputError, ValueError):
    pass


class DataError(InputError, ValueError):
    """Malformed input data. ``location`` is a (row, column) pair when known."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class GraphFileError(InputError, ValueError):
    pass


class GraphParseError(GraphFileError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class IntegrityError(GraphFileError):
    """Serialized payload disagrees with its own header, or is truncated."""


class ContractError(TsatError):
    """A documented precondition of an internal API was violated."""


class DegenerateSignalError(TsatError):
    """Too few extrema to build spline envelopes."""


class NonFiniteError(TsatError, FloatingPointError):
    pass
