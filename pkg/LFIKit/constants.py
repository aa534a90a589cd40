from typing import Type
from . import simulators
from .abc_samplers import ABC_KERNELS
from .classic_density import GaussianModel, HistogramModel, KdeModel
from .flows import MadeNet, MafModel
from .mdn import CorrectedMixture, GaussianMixture, MdnModel

TOOLKIT_VERSION: str = "0.1"
CONFIG_SCHEMA_VERSION: int = 1

# Simulator Registry
SIMULATORS: dict[str, Type[simulators.BaseSimulator]] = {
    "gaussian_toy": simulators.GaussianToy,
    "lotka_volterra": simulators.LotkaVolterraSim,
    "mg1": simulators.Mg1Sim,
    "quadratic_toy": simulators.QuadraticToy
}
# Simulators with stored standardization constants
STANDARDIZED_SIMULATORS: tuple[str, ...] = ("lotka_volterra", "mg1")

# Supported Algorithms
ALGORITHMS: tuple[str, ...] = (
    "rejection",
    "smooth",
    "mcmc-abc",
    "is-abc",
    "smc-abc",
    "snpe-a",
    "snpe-b",
    "snl",
    "maxvar-snl"
)
ABC_ALGORITHMS: tuple[str, ...] = ALGORITHMS[:5]

KERNELS: tuple[str, ...] = tuple(ABC_KERNELS)

# Model documents by their "kind" tag
MODEL_KINDS: dict[str, type] = {
    "gaussian": GaussianModel,
    "histogram": HistogramModel,
    "kde": KdeModel,
    "made": MadeNet,
    "maf": MafModel,
    "mixture": GaussianMixture,
    "corrected_mixture": CorrectedMixture,
    "mdn": MdnModel
}

EXIT_CODES: dict[str, int] = {
    "ok": 0,
    "config_error": 2,
    "runtime_error": 3,
    "terminated_early": 4
}
