"""Exception types shared across the package."""


class AerostateError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(AerostateError, ValueError):
    """Input data violates a structural or numerical precondition."""


class SchemaError(ValidationError):
    """A source file does not match its expected layout.

    Carries enough context to point the user at the first offending line.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class DataError(AerostateError, ValueError):
    """Parsed data is structurally fine but numerically unusable."""


class DomainError(AerostateError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigError(AerostateError, ValueError):
    """A run configuration is inconsistent or incomplete."""


class InitializationError(AerostateError, RuntimeError):
    """Sampler start state has a non-finite posterior density."""

    def __init__(self, message: str, block: str | None = None):
        self.block = block
        if block is not None:
            message = f"{message} (block: {block})"
        super().__init__(message)


class SimulationScaleError(AerostateError, OverflowError):
    """Simulated intensity exceeded the finite-count guard."""

    def __init__(self, message: str, t: int | None = None):
        self.t = t
        if t is not None:
            message = f"{message} (week index t={t})"
        super().__init__(message)
