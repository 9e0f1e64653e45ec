from typing import Optional


class CompletionError(Exception):
    """Base class for every error raised by the completion toolkit."""


class ShapeError(CompletionError, ValueError):
    pass


class NumericError(CompletionError, ArithmeticError):
    """A NaN/Inf appeared. `component` names the loss term or op responsible."""

    def __init__(self, message: str, component: Optional[str] = None):
        super().__init__(message)
        self.component = component


class GraphError(CompletionError, RuntimeError):
    pass


class ConfigError(CompletionError, ValueError):
    pass


class DataError(CompletionError, ValueError):
    pass


class MaskError(DataError):
    pass


class PlacementRejected(MaskError):
    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


class CheckpointError(DataError):
    pass
