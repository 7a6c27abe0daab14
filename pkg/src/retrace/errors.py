"""Exception hierarchy shared by every module of the package."""


class RetraceError(Exception):
    """Base class for all library errors."""


class StructuralError(RetraceError, ValueError):
    """Array shapes or dimensions do not fit together."""


class DomainError(RetraceError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericalError(RetraceError, ArithmeticError):
    """A linear solve or iteration produced an unusable result."""


class ConvergenceError(NumericalError):
    """An iterative method hit its iteration cap."""


class ResourceError(RetraceError, RuntimeError):
    """A computation would exceed its configured enumeration budget."""


class ConfigError(RetraceError, ValueError):
    """Invalid experiment configuration.

    ``line`` is the 1-based line number in the config file, when known.
    """

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
