from dataclasses import dataclass
from typing import ClassVar
import numpy as np
from ..classic_density import GaussianModel
from ..num_core import RngStream
from .base_simulator import BaseSimulator

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class QuadraticToy(BaseSimulator):
    """
    theta ~ N(0, 1), x = theta^2 + N(0, noise_std^2). The posterior at
    x0 > 0 has two modes at +-sqrt(x0), which a single Gaussian proposal
    cannot follow.
    """
    name: ClassVar[str] = "quadratic_toy"
    noise_std: float = 0.1

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive.")

    @property
    def param_dim(self) -> int:
        return 1

    @property
    def data_dim(self) -> int:
        return 1

    def prior_sample(self, rng: RngStream) -> np.ndarray:
        return rng.normal(size=1)

    def prior_log_prob(self, theta) -> float:
        t = float(np.ravel(theta)[0])
        return -0.5 * t * t - 0.5 * _LOG_2PI

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        t = float(np.ravel(theta)[0])
        return np.array([t * t + self.noise_std * rng.normal()])

    def prior_std(self) -> np.ndarray:
        return np.ones(1)

    def prior_gaussian(self) -> GaussianModel:
        return GaussianModel(np.zeros(1), np.eye(1))
