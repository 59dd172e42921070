"""Exception types shared across the package."""


class CLError(Exception):
    """Base class for every error raised by clsurrogate."""


class ConfigError(CLError, ValueError):
    pass


class ArgumentError(CLError, ValueError):
    pass


class ShapeError(CLError, ValueError):
    pass


class NumericError(CLError, ArithmeticError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class IngestionError(CLError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ScenarioError(CLError, ValueError):
    pass


class MetricError(CLError, ValueError):
    pass


class RunError(CLError):
    pass
