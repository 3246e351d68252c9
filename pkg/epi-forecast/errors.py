class ForecastError(Exception):
    """Base class for every error raised by the forecasting engine."""


class InvalidArgumentError(ForecastError, ValueError):
    """An argument violates a documented precondition."""


class EmptyDataError(ForecastError, ValueError):
    """Not enough data to build the requested windows, splits or scores."""


class ShapeMismatchError(ForecastError, ValueError):
    """Arrays or tensors that must line up do not."""


class ConfigurationError(ForecastError):
    """A config file, override or lookup table is incomplete or inconsistent."""


class UnknownNodeError(ForecastError, KeyError):
    """A location identifier is not part of the node universe."""

    def __str__(self):
        # KeyError quotes its argument, keep the plain message
        return str(self.args[0]) if self.args else ""


class DataFormatError(ForecastError):
    """A row of an input file does not follow its schema."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DivergenceError(ForecastError, ArithmeticError):
    """Training or gradient evaluation produced a non-finite value."""

    def __init__(self, message, epoch=None, block=None):
        self.epoch = epoch
        self.block = block
        super().__init__(message)


class StageError(ForecastError):
    """Wraps a failure inside one stage of the experiment pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
