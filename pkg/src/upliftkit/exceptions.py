"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`UpliftError`. The
``exit_code`` attribute is what the command line maps the error onto.
"""


class UpliftError(Exception):
    exit_code = 1


class ConfigError(UpliftError, ValueError):
    exit_code = 2


class DataError(UpliftError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    """A required column is missing from the input header."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class ParseError(DataError):
    def __init__(self, row, column, value):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class DomainError(DataError):
    def __init__(self, message, row=None, column=None):
        self.row, self.column = row, column
        super().__init__(message)


class StratificationError(DataError):
    def __init__(self, stratum, size):
        self.stratum, self.size = stratum, size
        t, y = stratum
        super().__init__(
            f"stratum (treatment={t}, outcome={y}) has {size} member(s); at least 2 required"
        )


class NumericError(UpliftError, ValueError):
    exit_code = 4


class ParameterError(NumericError):
    pass


class FitError(NumericError):
    pass


class EvaluationError(NumericError):
    pass


class AttributionError(NumericError):
    pass
