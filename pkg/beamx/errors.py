from beamx._autodiff.tensor import DomainError, ShapeError


class ConfigError(ValueError):
    """Invalid configuration, header or command-line value."""


class DatasetFormatError(ValueError):
    """Malformed dataset or label file. The message names the file and line."""

    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class PermutationError(ValueError):
    """A permutation that is not a bijection or does not fit the object."""


class DimensionError(ValueError):
    """A fixed-size model evaluated on a problem of different dimensions."""


class SolverError(ValueError):
    """A classical scheme that is undefined for the given channel."""


class TrainingDivergedError(RuntimeError):
    """
    The training loss became NaN.

    Attributes:
        epoch: epoch in which the loss diverged.
        params: last parameters that produced a finite loss.
    """

    def __init__(self, epoch: int, params, message: str) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.params = params


__all__ = [
    "ConfigError", "DatasetFormatError", "DimensionError", "DomainError", "PermutationError",
    "ShapeError", "SolverError", "TrainingDivergedError",
]
