"""Exception types raised across the package."""


class GammaSSLError(Exception):
    pass


class ConfigError(GammaSSLError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(GammaSSLError, ValueError):
    pass


class NumericalError(GammaSSLError, ArithmeticError):
    def __init__(self, message: str, block: int | None = None):
        self.block = block
        super().__init__(message if block is None else f"block {block}: {message}")


class UsageError(GammaSSLError, RuntimeError):
    pass


class DataError(GammaSSLError, ValueError):
    pass


class TrainingError(GammaSSLError, RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


class FittingError(GammaSSLError, ValueError):
    pass


class MetricError(GammaSSLError, ValueError):
    pass


class ParseError(GammaSSLError, ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
