from dataclasses import dataclass, field
from typing import Union
import numpy as np
from .classic_density import fit_kde, kde_log_prob
from .num_core import Matrix, as_matrix
from .errors import InsufficientDataError


def neg_log_true_params(samples, theta_true) -> float:
    """
    -log of a Gaussian KDE (Scott bandwidth) of the posterior samples,
    evaluated at theta_true.

    Raises:
        InsufficientDataError: If fewer than 10 samples are given.
        DegenerateDataError: If the samples have zero spread.
    """
    samples = as_matrix(samples, name="samples")
    if samples.shape[0] < 10:
        raise InsufficientDataError("Need at least 10 posterior samples.")
    return -kde_log_prob(fit_kde(samples, "scott"), theta_true)


def equal_weight_points(params, weights) -> Matrix:
    """
    Deterministic systematic resample (offset 1/2) of a weighted sample
    into as many equally weighted points.
    """
    params = as_matrix(params, name="params")
    weights = np.asarray(weights, dtype=np.float64)
    n = params.shape[0]
    positions = (0.5 + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights / weights.sum()), positions, side="right")
    return params[np.minimum(idx, n - 1)]


@dataclass
class RoundTrace:
    """
    Record of one round of an inference run.

    Attributes:
        round_index (int): 1-based round number.
        n_simulations (int): Simulations spent in this round.
        cumulative_simulations (int): Simulations spent up to this round.
        proposal (str): Description of the round's proposal.
        posterior_mean (list[float]): Mean of the round's posterior draws.
        posterior_cov (list[list[float]]): Their covariance.
        diagnostics (dict): Named scalar diagnostics (ESS, MMD, ...).
        wall_clock (float): Seconds spent in the round. Kept out of
            to_dict so traces of repeated runs are byte-identical.
        weights (np.ndarray | None): Per-simulation training weights of
            the round, for algorithms that weight their training set.
            Kept out of to_dict.
    """
    round_index: int
    n_simulations: int
    cumulative_simulations: int
    proposal: str
    posterior_mean: list = field(default_factory=list)
    posterior_cov: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    weights: Union[np.ndarray, None] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(
        cls,
        round_index: int,
        n_simulations: int,
        cumulative_simulations: int,
        proposal: str,
        samples: np.ndarray,
        weights: Union[np.ndarray, None]=None,
        **diagnostics
    ) -> "RoundTrace":
        """Trace summarizing (optionally weighted) posterior draws."""
        samples = np.atleast_2d(samples)
        if weights is None:
            weights = np.full(samples.shape[0], 1.0 / samples.shape[0])
        mean = weights @ samples
        centred = samples - mean
        cov = (weights[:, np.newaxis] * centred).T @ centred
        return cls(
            round_index,
            n_simulations,
            cumulative_simulations,
            proposal,
            mean.tolist(),
            cov.tolist(),
            {k: float(v) for k, v in diagnostics.items() if v is not None}
        )

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "n_simulations": self.n_simulations,
            "cumulative_simulations": self.cumulative_simulations,
            "proposal": self.proposal,
            "posterior_mean": self.posterior_mean,
            "posterior_cov": self.posterior_cov,
            "diagnostics": self.diagnostics,
        }
