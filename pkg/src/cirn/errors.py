"""Exception types raised across the package."""


class CIRNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CIRNError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(CIRNError, ValueError):
    """A call violated an operation's precondition."""


class NumericError(CIRNError, ArithmeticError):
    """A non-finite value appeared where a finite one was required."""


class ConfigError(CIRNError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DataError(CIRNError, ValueError):
    """Input data is malformed or violates a record invariant."""


class FormatError(CIRNError, ValueError):
    """A file does not match the expected format or version."""


class CorruptionError(FormatError):
    """A file is truncated or fails its integrity check."""
