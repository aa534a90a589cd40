"""Exception hierarchy of LFIKit.

Every concrete error also derives from the closest built-in exception, so
callers can catch either ``LFIError`` or e.g. ``ValueError``.
"""
from typing import Any, Union


class LFIError(Exception):
    """Base class for all LFIKit errors."""


class ShapeError(LFIError, ValueError):
    """Raised when array dimensions don't match."""


class NumericError(LFIError, ArithmeticError):
    """
    Raised when a computation produces a non-finite value.

    Attributes:
        index: Offending index (entry, layer, ...) if known.
    """
    def __init__(self, message: str, index: Union[int, None]=None):
        super().__init__(message)
        self.index = index


class InsufficientDataError(LFIError, ValueError):
    """Raised when a dataset has fewer rows than an operation needs."""


class RangeError(LFIError, ValueError):
    """
    Raised when a datapoint falls outside an allowed range.

    Attributes:
        index: Row index of the first offending datapoint.
    """
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class DegenerateDataError(LFIError, ValueError):
    """Raised when data has zero spread where spread is required."""


class TrainingError(LFIError, RuntimeError):
    """
    Raised when training diverges.

    Attributes:
        epoch: Epoch at which the validation loss became non-finite.
    """
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class NonPositiveDefiniteError(LFIError, ArithmeticError):
    """
    Raised when a corrected mixture component has a non positive-definite
    precision matrix.

    Attributes:
        component: Index of the failing mixture component.
    """
    def __init__(self, message: str, component: int):
        super().__init__(message)
        self.component = component


class DegenerateWeightsError(LFIError, ValueError):
    """Raised when training weights are all zero or non-finite."""


class BudgetExhaustedError(LFIError, RuntimeError):
    """
    Raised when a sampler runs out of simulations.

    Attributes:
        partial: Samples accepted before the budget ran out.
        n_simulated: Number of simulations spent.
        completed_rounds: Round traces completed before the failure.
    """
    def __init__(
        self,
        message: str,
        partial: Any=None,
        n_simulated: int=0,
        completed_rounds: Union[list, None]=None
    ):
        super().__init__(message)
        self.partial = partial
        self.n_simulated = n_simulated
        self.completed_rounds = completed_rounds or []


class DegeneratePopulationError(LFIError, ValueError):
    """Raised when importance weights are all zero or infinite."""


class DegenerateKernelError(LFIError, ValueError):
    """Raised when a kernel bandwidth heuristic yields zero."""


class DegenerateAcquisitionError(LFIError, ValueError):
    """Raised when the acquisition objective is identically zero."""


class InitializationError(LFIError, ValueError):
    """Raised when an MCMC chain starts at a zero-density state."""


class RoundError(LFIError, RuntimeError):
    """
    Raised when a sequential round fails.

    Attributes:
        round_index: 1-based index of the failing round.
        traces: Traces of the rounds completed so far.
    """
    def __init__(self, message: str, round_index: int, traces: list):
        super().__init__(message)
        self.round_index = round_index
        self.traces = traces


class ConfigError(LFIError, ValueError):
    """
    Raised when an experiment config fails validation.

    Attributes:
        tag: Machine-parsable error tag, e.g. "E_CONFIG_SIMULATOR".
    """
    def __init__(self, message: str, tag: str):
        super().__init__(message)
        self.tag = tag
