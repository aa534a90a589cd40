from dataclasses import dataclass, field
from typing import ClassVar
import logging
import numpy as np
from ..num_core import RngStream
from .base_simulator import BaseSimulator
from .standardization import load_constants

logger = logging.getLogger(__name__)

# Reactions: prey birth, predation, predator death, prey death.
# Rows give the consumed counts (propensity exponents) and the net change
# of (prey, predators).
REACTANTS = np.array([[1, 0], [1, 1], [0, 1], [1, 0]])
CHANGES = np.array([[1, 0], [-1, 1], [0, -1], [-1, 0]])
N_SUMMARIES = 9


@dataclass
class GillespieResult:
    """
    Populations recorded on a time grid.

    Attributes:
        times (np.ndarray): Recording grid.
        counts (np.ndarray): (grid, 2) prey and predator counts.
        events (np.ndarray): Number of firings of every reaction.
        truncated (bool): True if the event cap stopped the simulation.
    """
    times: np.ndarray
    counts: np.ndarray
    events: np.ndarray
    truncated: bool


def gillespie(
    rates,
    initial,
    duration: float,
    n_grid: int,
    rng: RngStream,
    max_events: int=1_000_000
) -> GillespieResult:
    """
    Exact stochastic simulation of the predator-prey reactions with
    propensities rates * prod(counts ** REACTANTS).

    Args:
        rates: Four non-negative reaction rates.
        initial: Initial (prey, predators) counts.
        duration (float): Simulated time.
        n_grid (int): Number of equally spaced recording times on [0, duration].
        rng (RngStream): Stream for waiting times and reaction choices.
        max_events (int): Event cap; the populations freeze once it is hit.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (4,) or np.any(rates < 0):
        raise ValueError("Expected four non-negative reaction rates.")
    times = np.linspace(0.0, duration, n_grid)
    state = np.array(initial, dtype=np.int64)
    counts = np.empty((n_grid, 2))
    events = np.zeros(4, dtype=np.int64)
    truncated = False
    t, k = 0.0, 0
    while True:
        h = rates * np.prod(state.astype(np.float64) ** REACTANTS, axis=1)
        h0 = h.sum()
        if not h0 > 0:
            break
        t += rng.exponential(1.0 / h0)
        while k < n_grid and times[k] < t:
            counts[k] = state
            k += 1
        if k == n_grid:
            break
        if events.sum() >= max_events:
            truncated = True
            break
        reaction = int(np.searchsorted(np.cumsum(h), rng.uniform() * h0, side="right"))
        reaction = min(reaction, 3)
        state += CHANGES[reaction]
        events[reaction] += 1
    counts[k:] = state
    return GillespieResult(times, counts, events, truncated)


def _standardized(s: np.ndarray) -> np.ndarray:
    sd = s.std()
    if not sd > 0:
        return np.zeros_like(s)
    return (s - s.mean()) / sd


def _autocorr(s: np.ndarray, lag: int) -> float:
    z = _standardized(s)
    return float(np.mean(z[:-lag] * z[lag:]))


def lv_summaries(counts: np.ndarray) -> np.ndarray:
    """
    Nine summaries of a (grid, 2) trajectory: means, log(variance + 1),
    lag-1 and lag-2 autocorrelations of prey and predators, and their
    cross-correlation. Correlations of a constant series are 0.
    """
    prey, pred = counts[:, 0], counts[:, 1]
    return np.array([
        prey.mean(),
        pred.mean(),
        np.log(prey.var() + 1.0),
        np.log(pred.var() + 1.0),
        _autocorr(prey, 1),
        _autocorr(prey, 2),
        _autocorr(pred, 1),
        _autocorr(pred, 2),
        float(np.mean(_standardized(prey) * _standardized(pred))),
    ])


@dataclass
class LotkaVolterraSim(BaseSimulator):
    """
    Stochastic Lotka-Volterra model. theta holds the four log-rates with a
    uniform prior on [log_rate_low, log_rate_high]^4.
    """
    name: ClassVar[str] = "lotka_volterra"
    initial_prey: int = 50
    initial_predators: int = 100
    duration: float = 30.0
    n_grid: int = 151
    max_events: int = 1_000_000
    log_rate_low: float = -5.0
    log_rate_high: float = 2.0
    standardize: bool = True
    _mean: np.ndarray = field(init=False, repr=False, compare=False)
    _scale: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive.")
        if self.initial_prey < 0 or self.initial_predators < 0:
            raise ValueError("Initial counts must be non-negative.")
        if not self.log_rate_low < self.log_rate_high:
            raise ValueError("Empty log-rate prior box.")
        if self.n_grid < 3:
            raise ValueError("n_grid must be at least 3.")
        if self.standardize:
            self._mean, self._scale = load_constants(self.name, sim_cls=type(self))
        else:
            self._mean, self._scale = np.zeros(N_SUMMARIES), np.ones(N_SUMMARIES)

    @property
    def param_dim(self) -> int:
        return 4

    @property
    def data_dim(self) -> int:
        return N_SUMMARIES

    def prior_sample(self, rng: RngStream) -> np.ndarray:
        return rng.uniform(self.log_rate_low, self.log_rate_high, size=4)

    def prior_log_prob(self, theta) -> float:
        theta = np.ravel(theta)
        if np.all((theta >= self.log_rate_low) & (theta <= self.log_rate_high)):
            return -4.0 * np.log(self.log_rate_high - self.log_rate_low)
        return -np.inf

    def prior_std(self) -> np.ndarray:
        return np.full(4, (self.log_rate_high - self.log_rate_low) / np.sqrt(12.0))

    def simulate_rates(self, rates, rng: RngStream) -> tuple[np.ndarray, dict]:
        """
        Summaries and run metadata for raw (non-log) rates; zero rates
        switch reactions off.
        """
        result = gillespie(
            rates,
            (self.initial_prey, self.initial_predators),
            self.duration,
            self.n_grid,
            rng,
            self.max_events
        )
        if result.truncated:
            logger.debug(f"Event cap reached for rates {np.ravel(rates)}")
        info = {
            "truncated": result.truncated,
            "n_events": int(result.events.sum()),
            "predator_births": int(result.events[1] * CHANGES[1, 1]),
            "predation_prey_deaths": int(-result.events[1] * CHANGES[1, 0]),
            "counts": result.counts,
        }
        summary = (lv_summaries(result.counts) - self._mean) / self._scale
        return summary, info

    def simulate_with_info(self, theta, rng: RngStream) -> tuple[np.ndarray, dict]:
        return self.simulate_rates(np.exp(np.ravel(theta)), rng)

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        summary, _ = self.simulate_with_info(theta, rng)
        return summary
