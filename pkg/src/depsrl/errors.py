"""Exception hierarchy shared across the toolkit.

The CLI maps each family onto a process exit code: configuration problems
exit with 2, data problems with 3, numeric failures with 4.
"""


class DepSrlError(Exception):
    exit_code = 1


class ConfigError(DepSrlError, ValueError):
    exit_code = 2


class DataError(DepSrlError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ValidationError(DataError):
    pass


class LengthError(DataError):
    pass


class NumericError(DepSrlError, ArithmeticError):
    exit_code = 4


class ShapeError(DepSrlError, ValueError):
    exit_code = 4
