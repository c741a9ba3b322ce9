"""Exception hierarchy shared across the package."""


class QcnError(Exception):
    """Base class for all errors raised by qcnet."""


class ValidationError(QcnError, ValueError):
    """An input violates a documented precondition."""


class MaskViolationError(ValidationError):
    """A Hamiltonian has a nonzero entry at a position the topology forbids."""


class NonUniqueSteadyStateError(QcnError):
    """The Liouvillian null space has dimension greater than one."""


class SolverError(QcnError):
    """A linear solve or time integration did not meet its tolerance."""


class DegenerateNetworkError(QcnError):
    """The network carries (numerically) no exit current for some input.

    Raised when the steady-state transport problem is singular, e.g. when an
    eigenmode of the network never couples to a drain.
    """


class ConfigError(QcnError, ValueError):
    """An experiment configuration is malformed.

    ``path`` holds the dotted field path that failed validation.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.detail = message


class DataError(QcnError, ValueError):
    """An input data file is malformed."""

    def __init__(self, message, row=None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row
