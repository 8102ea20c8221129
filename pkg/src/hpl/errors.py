"""Exception hierarchy shared by all modules, with CLI exit codes."""


class HplError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(HplError):
    """An argument is outside its legal range or inconsistent with the model."""

    exit_code = 2


class ResourceLimitError(HplError):
    """A configured cap (atoms, tree size, enumeration size) would be exceeded."""

    exit_code = 3


class VerificationError(HplError):
    """A check that was expected to certify or verify did not."""

    exit_code = 1


class InconclusiveError(HplError):
    """A solver could neither accept nor reject at the required resolution."""

    exit_code = 1

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness
