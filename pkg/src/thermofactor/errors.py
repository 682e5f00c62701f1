"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage 2, data 3, numerical degeneracy 4.
"""


class ThermofactorError(Exception):
    exit_code = 3


class ParameterError(ThermofactorError, ValueError):
    """An argument is outside the operation's preconditions."""


class FormatError(ThermofactorError):
    """A file does not match its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DomainError(ParameterError):
    """Input data violates a method's domain, e.g. negative entries for NMF."""


class DegenerateInputError(ThermofactorError):
    """Input has no usable variation (zero variance, constant region, ...)."""

    exit_code = 4


class SpecError(ParameterError):
    """A phantom specification is physically or geometrically impossible."""


class UsageError(ThermofactorError):
    exit_code = 2
