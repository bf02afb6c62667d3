"""Exception hierarchy shared by every tcalib module."""


class TcalibError(Exception):
    """Base class for all errors raised by tcalib."""


class InvalidArgumentError(TcalibError, ValueError):
    pass


class DegenerateInputError(TcalibError, ValueError):
    """Input has no direction (zero vector, zero-mean pooling)."""


class FormatError(TcalibError):
    """A file could not be parsed (bad syntax, bad magic tag)."""


class SchemaError(TcalibError):
    """A file parsed but its content violates the expected schema."""


class MissingClassError(TcalibError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class CorruptionError(FormatError):
    """Binary payload ended early or carries trailing garbage."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class VersionError(FormatError):
    pass


class NumericFailureError(TcalibError, ArithmeticError):
    def __init__(self, message, step=None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"{message}{where}")
        self.step = step


class ConfigValidationError(TcalibError):
    pass
