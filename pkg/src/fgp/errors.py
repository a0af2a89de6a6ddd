"""Exception hierarchy shared by the toolchain."""


class FGPError(Exception):
    """Base class; ``code`` is the token used in protocol status replies."""

    code = "INTERNAL"


class DimensionError(FGPError, ValueError):
    code = "DIMENSION"


class SingularError(FGPError, ArithmeticError):
    code = "SINGULAR"


class DivideByZeroError(FGPError, ZeroDivisionError):
    code = "DIVZERO"


class BusyError(FGPError):
    code = "BUSY"


class SizeError(FGPError, ValueError):
    code = "SIZE"


class CapacityError(FGPError):
    code = "CAPACITY"


class AddressFault(FGPError):
    code = "ADDRESS"


class DecodeError(FGPError, ValueError):
    code = "DECODE"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"word {offset}: {message}"
        super().__init__(message)
        self.offset = offset


class AsmError(FGPError, ValueError):
    """Assembly or graph-program syntax error with a source location."""

    code = "SYNTAX"

    def __init__(self, message, line=None, col=None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.col = col


class ProgramError(FGPError):
    """Unknown program index or malformed control flow at run time."""

    code = "PROGRAM"
