"""Exception hierarchy shared by the library and the CLI."""


class PhModemError(Exception):
    """Base class for all errors raised by phmodem."""

    exit_code = 1


class InvalidArgumentError(PhModemError, ValueError):
    exit_code = 2


class WindowOverrunError(InvalidArgumentError):
    """The trace is too short for the requested symbol windows."""


class SyncFailureError(PhModemError):
    """No transmission onset could be located in the differenced signal."""

    exit_code = 3


class IdentifiabilityError(PhModemError):
    """The schedule cannot constrain every model parameter."""

    exit_code = 4


class NonConvergenceError(PhModemError):
    """Raised when every multistart search failed; carries the best effort."""

    exit_code = 5

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
