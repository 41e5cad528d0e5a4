"""Exception hierarchy shared by every module of the package."""


class SNDSError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SNDSError, ValueError):
    def __init__(self, primitive: str, detail: str):
        self.primitive = primitive
        super().__init__(f"{primitive}: {detail}")


class NumericOverflowError(SNDSError, ArithmeticError):
    pass


class GraphError(SNDSError, RuntimeError):
    pass


class DomainError(SNDSError, ValueError):
    pass


class ConfigError(SNDSError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class BudgetError(SNDSError, ValueError):
    pass


class DataFormatError(SNDSError, ValueError):
    pass


class ConstructionError(SNDSError, ValueError):
    pass


class CycleError(SNDSError, RuntimeError):
    """A failure inside an active-learning cycle, tagged with the cycle number."""

    def __init__(self, cycle: int, cause: Exception):
        self.cycle = cycle
        self.cause = cause
        super().__init__(f"cycle {cycle}: {type(cause).__name__}: {cause}")
