"""Exception hierarchy shared by the library and the CLI.

Each family carries the process exit code the CLI reports for it.
"""


class A2basError(Exception):
    exit_code = 1


class ConfigError(A2basError, ValueError):
    exit_code = 2


class DataFileError(A2basError, OSError):
    exit_code = 3


class ParseError(A2basError, ValueError):
    exit_code = 4

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateEntryError(ParseError):
    def __init__(self, row, col, line=None):
        super().__init__(f"duplicate entry for pair ({row}, {col})", line)
        self.pair = (row, col)


class DivergenceError(A2basError, ArithmeticError):
    exit_code = 5

    def __init__(self, message, triplet=None):
        super().__init__(message)
        self.triplet = triplet


class CheckpointError(A2basError, ValueError):
    exit_code = 6


class EvaluationError(A2basError, ValueError):
    exit_code = 7
