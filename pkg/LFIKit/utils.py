from . import config
from .constants import MODEL_KINDS, SIMULATORS
from .simulators import BaseSimulator
from typing import Union
from dotenv import load_dotenv
import hashlib, logging, os

LOG_LEVELS: tuple[str, ...] = ("DEBUG", "INFO", "WARNING", "ERROR")


def set_threads(threads: int) -> None:
    """
    Set the number of worker threads used for simulation batches.

    Args:
        threads (int): Number of threads, at least 1.

    Raises:
        ValueError: If threads is not a positive integer.
    """
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        raise ValueError(f"Thread count {threads!r} must be a positive integer.")
    config.THREADS = threads


def set_adam_defaults(
    lr: Union[float, None]=None,
    beta1: Union[float, None]=None,
    beta2: Union[float, None]=None,
    eps: Union[float, None]=None
) -> None:
    """
    Set the default Adam hyper-parameters. Arguments left as None keep
    their current value.

    Raises:
        ValueError: If a value is out of range.
    """
    if lr is not None and not lr > 0:
        raise ValueError("Learning rate must be positive.")
    for name, beta in (("beta1", beta1), ("beta2", beta2)):
        if beta is not None and not 0 <= beta < 1:
            raise ValueError(f"{name} must lie in [0, 1).")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be positive.")
    config.ADAM_LR = config.ADAM_LR if lr is None else float(lr)
    config.ADAM_BETA1 = config.ADAM_BETA1 if beta1 is None else float(beta1)
    config.ADAM_BETA2 = config.ADAM_BETA2 if beta2 is None else float(beta2)
    config.ADAM_EPS = config.ADAM_EPS if eps is None else float(eps)


def set_log_level(level: str) -> None:
    """
    Set the level of the "LFIKit" logger.

    Raises:
        ValueError: If the level name is unknown.
    """
    level = level.upper()
    if level not in LOG_LEVELS:
        raise ValueError(f"Log level {level} is not supported.")
    config.LOG_LEVEL = level
    logging.getLogger("LFIKit").setLevel(level)


def load_environment(dotenv_path: Union[str, None]=None) -> None:
    """
    Reads LFI_THREADS and LFI_LOG_LEVEL from the environment, after
    loading a .env file if one is found.

    Raises:
        ValueError: If a variable holds an invalid value.
    """
    load_dotenv(dotenv_path)
    threads = os.getenv("LFI_THREADS")
    if threads:
        try:
            set_threads(int(threads))
        except ValueError as e:
            raise ValueError(f"LFI_THREADS={threads!r} is invalid.") from e
    level = os.getenv("LFI_LOG_LEVEL")
    if level:
        set_log_level(level)


def make_simulator(name: str, settings: Union[dict, None]=None) -> BaseSimulator:
    """
    Instantiates a registered simulator from its settings block.

    Raises:
        ValueError: If the simulator is not registered.
    """
    if name not in SIMULATORS:
        raise ValueError(f"Simulator {name} is not supported.")
    return SIMULATORS[name].from_settings(settings)


def model_from_dict(doc: dict):
    """
    Rebuilds a density model from its JSON document.

    Raises:
        ValueError: If the document's kind is unknown.
    """
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise ValueError(f"Model kind {kind} is not supported.")
    return MODEL_KINDS[kind].from_dict(doc)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
