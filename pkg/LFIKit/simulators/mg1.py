from dataclasses import dataclass, field
from typing import ClassVar
import numpy as np
from ..num_core import RngStream
from .base_simulator import BaseSimulator
from .standardization import load_constants

QUANTILE_LEVELS = np.linspace(0.0, 1.0, 5)


def queue_times(
    service: np.ndarray,
    inter_arrival: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Arrival and departure times of a single-server FIFO queue
    (Lindley recursion d_i = max(a_i, d_{i-1}) + s_i).
    """
    arrivals = np.cumsum(inter_arrival)
    departures = np.empty_like(arrivals)
    last = 0.0
    for i, (a, s) in enumerate(zip(arrivals, service)):
        last = max(a, last) + s
        departures[i] = last
    return arrivals, departures


@dataclass
class Mg1Sim(BaseSimulator):
    """
    M/G/1 queue. Service times are Uniform(theta_1, theta_2) and
    inter-arrival times Exponential with rate theta_3. The prior is
    theta_1 ~ U(0, 10), theta_2 - theta_1 ~ U(0, 10), theta_3 ~ U(0, 1/3).
    The summaries are the 0, 25, 50, 75 and 100 percent quantiles of the
    n_customers - 1 gaps between consecutive departures. The wait for the
    first departure depends on the first arrival and is left out.
    """
    name: ClassVar[str] = "mg1"
    n_customers: int = 50
    standardize: bool = True
    _mean: np.ndarray = field(init=False, repr=False, compare=False)
    _scale: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_customers < 10:
            raise ValueError("n_customers must be at least 10.")
        if self.standardize:
            self._mean, self._scale = load_constants(self.name, sim_cls=type(self))
        else:
            self._mean, self._scale = np.zeros(5), np.ones(5)

    @property
    def param_dim(self) -> int:
        return 3

    @property
    def data_dim(self) -> int:
        return QUANTILE_LEVELS.size

    def prior_sample(self, rng: RngStream) -> np.ndarray:
        low = rng.uniform(0.0, 10.0)
        width = rng.uniform(0.0, 10.0)
        rate = rng.uniform(0.0, 1.0 / 3.0)
        return np.array([low, low + width, rate])

    def prior_log_prob(self, theta) -> float:
        t1, t2, t3 = np.ravel(theta)
        if 0 <= t1 <= 10 and 0 <= t2 - t1 <= 10 and 0 <= t3 <= 1.0 / 3.0:
            return float(-2.0 * np.log(10.0) + np.log(3.0))
        return -np.inf

    def prior_std(self) -> np.ndarray:
        return np.array([
            10.0 / np.sqrt(12.0),
            np.sqrt(2.0) * 10.0 / np.sqrt(12.0),
            1.0 / (3.0 * np.sqrt(12.0)),
        ])

    def simulate_queue(self, theta, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        """Arrival and departure times of the served customers."""
        t1, t2, t3 = np.ravel(theta)
        if not (t1 <= t2 and t3 > 0):
            raise ValueError("Need theta_1 <= theta_2 and theta_3 > 0.")
        service = rng.uniform(t1, t2, size=self.n_customers)
        inter_arrival = rng.exponential(1.0 / t3, size=self.n_customers)
        return queue_times(service, inter_arrival)

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        _, departures = self.simulate_queue(theta, rng)
        gaps = np.diff(departures)
        summary = np.quantile(gaps, QUANTILE_LEVELS)
        return (summary - self._mean) / self._scale
