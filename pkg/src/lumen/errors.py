"""Exception hierarchy shared by every module."""


class LumenError(Exception):
    """Base class for all package errors."""


class ContractError(LumenError, ValueError):
    """An argument violates a documented precondition (shape, range tag, channel count)."""


class DomainError(LumenError, ValueError):
    """A numeric argument lies outside the mathematical domain of the operation."""


class FormatError(LumenError, ValueError):
    """A file could not be parsed; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CapacityError(LumenError, ValueError):
    """Declared image dimensions exceed what the reader is willing to allocate."""


class NumericError(LumenError, ArithmeticError):
    """A computation produced non-finite values or an ill-posed reduction."""

    def __init__(self, message, **metadata):
        self.metadata = metadata
        if metadata:
            details = ", ".join(f"{k}={v}" for k, v in metadata.items())
            message = f"{message} [{details}]"
        super().__init__(message)
