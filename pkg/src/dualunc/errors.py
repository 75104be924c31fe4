"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DualUncError(Exception):
    exit_code = 1
    code = "error"


class ArgumentError(DualUncError, ValueError):
    exit_code = 2
    code = "argument"


class UsageError(DualUncError):
    exit_code = 2
    code = "usage"


class DataError(DualUncError):
    exit_code = 3
    code = "data"


class ParseError(DataError):
    code = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    code = "schema"


class StateError(DataError):
    code = "state"


class EmptyAnnotationError(DataError):
    code = "empty_annotation"


class NumericError(DualUncError, ArithmeticError):
    exit_code = 4
    code = "numeric"


class NumericDegenerateError(NumericError):
    code = "numeric_degenerate"


class FatalConfigError(DualUncError):
    exit_code = 5
    code = "fatal_config"
