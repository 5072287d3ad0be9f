"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericError`` -> 3.
"""


class CtrElmError(Exception):
    """Base class for all package errors."""


class ConfigError(CtrElmError):
    """Invalid run configuration or schema file."""


class DataError(CtrElmError):
    """Malformed input data or model/table file."""


class ParseError(DataError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LabelError(ParseError):
    pass


class FormatError(DataError):
    """Bad magic, unsupported version or truncated binary file."""


class ShapeError(DataError, ValueError):
    pass


class NumericError(CtrElmError, ArithmeticError):
    pass


class SingularityError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, step):
        super().__init__(f"non-finite loss at step {step}; lower the learning rate")
        self.step = step


class UndefinedMetricError(NumericError, ValueError):
    pass
