from .errors import LFIError, ConfigError
from .num_core import RngStream
from .constants import (
    ALGORITHMS,
    MODEL_KINDS,
    SIMULATORS,
    TOOLKIT_VERSION
)
from .model_store import ModelStore
from . import abc_samplers, seq_inference, simulators

__version__ = TOOLKIT_VERSION
