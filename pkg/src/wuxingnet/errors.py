"""Exception types raised across the package."""

from __future__ import annotations


class WuxingError(Exception):
    """Base class for all package errors."""


class NumericOverflowError(WuxingError, ArithmeticError):
    """A derivative or integrator stage produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class FixedPointNotFoundError(WuxingError, RuntimeError):
    pass


class TopologyError(WuxingError, ValueError):
    """Raised when a wiring request cannot be satisfied."""


class SimulationDivergedError(WuxingError, ArithmeticError):
    """A network trajectory left the finite range.

    ``neuron`` is the first offending neuron id and ``time`` the simulated
    time at which the blow-up was detected.  Training fills in ``epoch``
    and ``sample`` (position within the epoch's shuffled order).
    """

    def __init__(self, neuron: int, time: float, direction: str = "forward"):
        super().__init__(f"{direction} simulation diverged at neuron {neuron}, t={time:.6g}")
        self.neuron = neuron
        self.time = time
        self.direction = direction
        self.epoch: int | None = None
        self.sample: int | None = None


class DataFormatError(WuxingError, ValueError):
    """Base class for IDX parsing failures."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class EmptyDatasetError(WuxingError, ValueError):
    pass
