class AdvRegError(Exception):
    """Base class for package errors."""


class ConfigError(AdvRegError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(AdvRegError, ArithmeticError):
    """A linear solve failed on a matrix that should be well conditioned."""


class ReplicationError(AdvRegError, RuntimeError):
    """A Monte Carlo replication failed; the estimate is aborted."""

    def __init__(self, index: int, cause: BaseException):
        self.index = index
        self.cause = cause
        super().__init__(f"replication {index} failed: {cause!r}")


class ResourceLimitError(AdvRegError, MemoryError):
    """A requested grid or workload exceeds the configured limits."""


class PackingError(AdvRegError, RuntimeError):
    """Sign vectors with the requested Hamming separation could not be found."""
