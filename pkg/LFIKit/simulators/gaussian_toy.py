from dataclasses import dataclass
from typing import ClassVar
import numpy as np
from ..classic_density import GaussianModel
from ..num_core import RngStream
from .base_simulator import BaseSimulator

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianToy(BaseSimulator):
    """
    Conjugate toy model: theta ~ N(prior_mean, prior_var I),
    x | theta ~ N(theta, noise_var I). The exact posterior is Gaussian.

    Attributes:
        prior_mean (float): Prior mean on every axis.
        prior_var (float): Prior variance on every axis.
        noise_var (float): Observation noise variance.
        dim (int): Dimension of theta and x.
    """
    name: ClassVar[str] = "gaussian_toy"
    prior_mean: float = 0.0
    prior_var: float = 1.0
    noise_var: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (self.prior_var > 0 and self.noise_var > 0):
            raise ValueError("Variances must be positive.")
        if self.dim < 1:
            raise ValueError("dim must be at least 1.")

    @property
    def param_dim(self) -> int:
        return self.dim

    @property
    def data_dim(self) -> int:
        return self.dim

    def prior_sample(self, rng: RngStream) -> np.ndarray:
        return self.prior_mean + np.sqrt(self.prior_var) * rng.normal(size=self.dim)

    def prior_log_prob(self, theta) -> float:
        r = np.ravel(theta) - self.prior_mean
        return float(
            -0.5 * np.sum(r ** 2) / self.prior_var
            - 0.5 * self.dim * (_LOG_2PI + np.log(self.prior_var))
        )

    def prior_log_probs(self, thetas) -> np.ndarray:
        r = np.atleast_2d(thetas) - self.prior_mean
        return (
            -0.5 * np.sum(r ** 2, axis=1) / self.prior_var
            - 0.5 * self.dim * (_LOG_2PI + np.log(self.prior_var))
        )

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        theta = np.ravel(theta)
        return theta + np.sqrt(self.noise_var) * rng.normal(size=self.dim)

    def prior_std(self) -> np.ndarray:
        return np.full(self.dim, np.sqrt(self.prior_var))

    def prior_gaussian(self) -> GaussianModel:
        return GaussianModel(
            np.full(self.dim, float(self.prior_mean)),
            self.prior_var * np.eye(self.dim)
        )

    def exact_posterior(self, x0) -> GaussianModel:
        """Per-axis conjugate update of the prior by one observation."""
        precision = 1.0 / self.prior_var + 1.0 / self.noise_var
        var = 1.0 / precision
        mean = var * (
            self.prior_mean / self.prior_var
            + np.ravel(x0).astype(np.float64) / self.noise_var
        )
        return GaussianModel(mean, var * np.eye(self.dim))
