"""
Approximate Bayesian computation: rejection and smooth-rejection ABC,
MCMC-ABC, pseudo-marginal Metropolis-Hastings, importance-sampling ABC,
SMC-ABC and linear regression adjustment.

Samplers that fan out simulations give every candidate its own child
stream, so their output does not depend on the number of worker threads.
Chains draw from the caller's stream directly.
"""
from dataclasses import dataclass, fields, replace
from typing import Callable, Union
import logging
import time
import numpy as np
from scipy.special import logsumexp
from .num_core import Matrix, RngStream, as_matrix, parallel_map
from .traces import RoundTrace, equal_weight_points, neg_log_true_params
from .errors import (
    BudgetExhaustedError,
    DegenerateDataError,
    DegeneratePopulationError,
    InitializationError,
    InsufficientDataError
)

_LOG_2PI = np.log(2.0 * np.pi)

DISTANCES: dict[str, Callable] = {
    "euclidean": lambda d: np.sqrt(np.sum(d ** 2, axis=-1)),
    "max": lambda d: np.max(np.abs(d), axis=-1),
}

# Unnormalized kernels of the scaled distance u = |x - x0| / eps
ABC_KERNELS: dict[str, Callable] = {
    "uniform": lambda u: (u <= 1.0).astype(np.float64),
    "gaussian": lambda u: np.exp(-0.5 * u ** 2),
    "epanechnikov": lambda u: np.clip(1.0 - u ** 2, 0.0, None),
}

RESAMPLING_METHODS: tuple[str, ...] = ("multinomial", "systematic")


@dataclass
class AbcConfig:
    """
    Settings shared by the ABC samplers.

    Attributes:
        tolerance (float): eps >= 0; inf accepts everything.
        distance (str): "euclidean" or "max".
        max_simulations (int): Simulation budget (per round for SMC-ABC).
        kernel (str): Kernel of the smooth-rejection variant.
        batch_size (int): Candidates simulated per parallel batch.
    """
    tolerance: float = float("inf")
    distance: str = "euclidean"
    max_simulations: int = 1_000_000
    kernel: str = "uniform"
    batch_size: int = 256

    def __post_init__(self):
        self.tolerance = float(self.tolerance)
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be non-negative.")
        if self.max_simulations < 1:
            raise ValueError("max_simulations must be at least 1.")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1.")
        if self.distance not in DISTANCES:
            raise ValueError(f"Distance {self.distance} is not supported.")
        if self.kernel not in ABC_KERNELS:
            raise ValueError(f"Kernel {self.kernel} is not supported.")

    @classmethod
    def from_dict(cls, settings: Union[dict, None]) -> "AbcConfig":
        settings = dict(settings or {})
        known = {f.name for f in fields(cls)}
        unknown = set(settings) - known
        if unknown:
            raise ValueError(f"Unknown ABC settings: {sorted(unknown)}")
        return cls(**settings)


@dataclass
class WeightedPopulation:
    """
    Parameter samples with normalized importance weights.

    Attributes:
        params (Matrix): (N, dim theta) particles.
        weights (np.ndarray): (N,) weights, non-negative, summing to 1.
        n_simulated (int): Simulations spent producing the population.
    """
    params: Matrix
    weights: np.ndarray
    n_simulated: int = 0

    def __post_init__(self):
        self.params = as_matrix(self.params, name="params")
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size != self.params.shape[0] or w.size < 1:
            raise ValueError("Need one weight per particle and N >= 1.")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or not w.sum() > 0:
            raise DegeneratePopulationError(
                "Weights must be finite, non-negative and not all zero."
            )
        self.weights = w / w.sum()

    @classmethod
    def uniform(cls, params, n_simulated: int=0) -> "WeightedPopulation":
        params = as_matrix(params, name="params")
        return cls(params, np.ones(params.shape[0]), n_simulated)

    @property
    def ess(self) -> float:
        return ess_estimate(self)

    def mean(self) -> np.ndarray:
        return self.weights @ self.params

    def std(self) -> np.ndarray:
        centred = self.params - self.mean()
        return np.sqrt(self.weights @ centred ** 2)


class PriorProposal:
    """A simulator's prior exposed through the sample/log_prob contract."""
    def __init__(self, sim):
        self.sim = sim

    def sample(self, n: int, rng: RngStream) -> Matrix:
        return self.sim.prior_sample_n(n, rng)

    def log_prob(self, thetas) -> np.ndarray:
        return self.sim.prior_log_probs(thetas)


class PerturbationMixture:
    """
    SMC-ABC proposal sum_n w_n N(theta; theta_n, diag(std^2)).

    Attributes:
        centres (Matrix): Particles of the previous round.
        weights (np.ndarray): Their normalized weights.
        std (np.ndarray): Per-axis kernel standard deviation.
    """
    def __init__(self, centres, weights, std):
        self.centres = as_matrix(centres, name="centres")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.std = np.broadcast_to(
            np.asarray(std, dtype=np.float64), (self.centres.shape[1],)
        ).copy()

    @classmethod
    def from_population(
        cls,
        pop: WeightedPopulation,
        scale: float=np.sqrt(2.0),
        floor: float=1e-6
    ) -> "PerturbationMixture":
        """Kernel std = scale x weighted population std, floored per axis."""
        return cls(pop.params, pop.weights, np.maximum(scale * pop.std(), floor))

    def sample(self, n: int, rng: RngStream) -> Matrix:
        idx = rng.choice(self.centres.shape[0], size=n, p=self.weights)
        return self.centres[idx] + self.std * rng.normal(size=(n, self.centres.shape[1]))

    def log_prob(self, thetas) -> np.ndarray:
        thetas = as_matrix(thetas, cols=self.centres.shape[1], name="thetas")
        u = (thetas[:, np.newaxis, :] - self.centres[np.newaxis, :, :]) / self.std
        log_k = (
            -0.5 * np.sum(u ** 2, axis=2)
            - np.sum(np.log(self.std))
            - 0.5 * self.centres.shape[1] * _LOG_2PI
        )
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return logsumexp(log_w + log_k, axis=1)


def abc_distance(
    xs,
    x0,
    distance: Union[str, Callable]="euclidean"
) -> np.ndarray:
    """Distance of every row of xs to x0."""
    fn = DISTANCES[distance] if isinstance(distance, str) else distance
    return np.asarray(fn(np.atleast_2d(xs) - np.ravel(x0)), dtype=np.float64)


def ess_estimate(pop: WeightedPopulation) -> float:
    """Effective sample size 1 / sum w_n^2 of normalized weights."""
    return float(1.0 / np.sum(pop.weights ** 2))


def population_neg_log_true_params(
    pop: WeightedPopulation,
    theta_true
) -> Union[float, None]:
    """
    neg_log_true_params of an equally weighted version of the population;
    None when theta_true is None or the particles have collapsed.
    """
    if theta_true is None:
        return None
    try:
        return neg_log_true_params(
            equal_weight_points(pop.params, pop.weights), theta_true
        )
    except (DegenerateDataError, InsufficientDataError):
        return None


def resample(
    weights,
    n: int,
    rng: RngStream,
    method: str="multinomial"
) -> np.ndarray:
    """
    Indices of n particles drawn proportionally to weights.

    Args:
        weights: Normalized weights.
        n (int): Number of draws.
        rng (RngStream): Random stream.
        method (str): "multinomial" or "systematic".
    """
    weights = np.asarray(weights, dtype=np.float64)
    if method == "multinomial":
        return rng.choice(weights.size, size=n, p=weights)
    if method == "systematic":
        positions = (rng.uniform() + np.arange(n)) / n
        idx = np.searchsorted(np.cumsum(weights), positions, side="right")
        return np.minimum(idx, weights.size - 1)
    raise ValueError(f"Resampling method {method} is not supported.")


def _accept_loop(
    sim,
    x0,
    cfg: AbcConfig,
    n_accept: int,
    rng: RngStream,
    propose: Callable[[RngStream], np.ndarray]
) -> tuple[Matrix, Matrix, int]:
    """
    Simulates candidates in batches of child streams until n_accept of
    them fall within the tolerance. n_simulated counts candidates up to
    the last accepted one.

    Raises:
        BudgetExhaustedError: If the budget runs out first; partial holds
            the accepted (params, data).
    """
    x0 = np.ravel(x0)

    def run_slot(stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
        theta = np.ravel(propose(stream))
        return theta, np.ravel(sim.simulate(theta, stream))

    thetas, xs, n_simulated = [], [], 0
    while len(thetas) < n_accept:
        remaining = cfg.max_simulations - n_simulated
        if remaining <= 0:
            raise BudgetExhaustedError(
                f"Budget of {cfg.max_simulations} simulations exhausted "
                f"after {len(thetas)} of {n_accept} acceptances.",
                partial=(np.array(thetas), np.array(xs)),
                n_simulated=n_simulated
            )
        streams = rng.spawn(min(cfg.batch_size, remaining))
        results = parallel_map(run_slot, streams)
        dist = abc_distance(np.array([x for _, x in results]), x0, cfg.distance)
        for (theta, x), d in zip(results, dist):
            n_simulated += 1
            if d <= cfg.tolerance:
                thetas.append(theta)
                xs.append(x)
                if len(thetas) == n_accept:
                    break
    return np.array(thetas), np.array(xs), n_simulated


def rejection_abc_with_data(
    sim,
    x0,
    cfg: AbcConfig,
    n_accept: int,
    rng: RngStream
) -> tuple[Matrix, Matrix, int]:
    """
    Rejection ABC returning the accepted parameters, their simulated
    summaries and the number of simulations.
    """
    if n_accept < 1:
        raise ValueError("n_accept must be at least 1.")
    return _accept_loop(sim, x0, cfg, n_accept, rng, sim.prior_sample)


def rejection_abc(
    sim,
    x0,
    cfg: AbcConfig,
    n_accept: int,
    rng: RngStream
) -> tuple[Matrix, int]:
    """
    Draws n_accept independent samples from p(theta | |x - x0| <= eps).

    Returns:
        tuple: (samples, n_simulated).

    Raises:
        BudgetExhaustedError: If the budget is exhausted first.
    """
    thetas, _, n_simulated = rejection_abc_with_data(sim, x0, cfg, n_accept, rng)
    return thetas, n_simulated


def smooth_rejection_abc(
    sim,
    x0,
    kernel: str,
    eps: float,
    n: int,
    rng: RngStream,
    distance: str="euclidean"
) -> WeightedPopulation:
    """
    Prior draws weighted by k((|x_n - x0|) / eps).

    Raises:
        DegeneratePopulationError: If every kernel weight is zero.
    """
    if not eps > 0:
        raise ValueError("eps must be positive.")
    if n < 1:
        raise ValueError("n must be at least 1.")
    if kernel not in ABC_KERNELS:
        raise ValueError(f"Kernel {kernel} is not supported.")

    def run_slot(stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
        theta = np.ravel(sim.prior_sample(stream))
        return theta, np.ravel(sim.simulate(theta, stream))

    results = parallel_map(run_slot, rng.spawn(n))
    thetas = np.array([t for t, _ in results])
    dist = abc_distance(np.array([x for _, x in results]), x0, distance)
    weights = ABC_KERNELS[kernel](dist / eps)
    if not weights.sum() > 0:
        raise DegeneratePopulationError("Every kernel weight is zero.")
    return WeightedPopulation(thetas, weights, n_simulated=n)


def _initial_state(sim, x0, eps, rng, distance, budget) -> np.ndarray:
    cfg = AbcConfig(tolerance=eps, distance=distance, max_simulations=budget)
    thetas, _ = rejection_abc(sim, x0, cfg, 1, rng)
    return thetas[0]


def mcmc_abc_chain(
    sim,
    x0,
    eps: float,
    proposal_std,
    theta_init,
    n_steps: int,
    rng: RngStream,
    distance: Union[str, Callable]="euclidean",
    init_budget: int=1_000_000
) -> Matrix:
    """
    MCMC-ABC with a Gaussian random walk. A proposal is accepted with
    probability min(1, p(theta') / p(theta)) if its simulation lands within
    eps of x0; proposals outside the prior support are rejected without
    simulating.

    Args:
        theta_init: Starting point; None runs rejection ABC until one
            acceptance.
        proposal_std: Per-axis random-walk standard deviation.

    Returns:
        Matrix: (n_steps, dim theta) chain.
    """
    if theta_init is None:
        theta_init = _initial_state(sim, x0, eps, rng, distance, init_budget)
    theta = np.array(theta_init, dtype=np.float64).ravel()
    log_p = sim.prior_log_prob(theta)
    if not np.isfinite(log_p):
        raise InitializationError("theta_init lies outside the prior support.")
    std = np.broadcast_to(np.asarray(proposal_std, dtype=np.float64), theta.shape)
    x0 = np.ravel(x0)
    chain = np.empty((n_steps, theta.size))
    for i in range(n_steps):
        candidate = theta + std * rng.normal(size=theta.size)
        log_p_new = sim.prior_log_prob(candidate)
        if np.log(rng.uniform()) < log_p_new - log_p:
            x = sim.simulate(candidate, rng)
            if abc_distance(x, x0, distance)[0] <= eps:
                theta, log_p = candidate, log_p_new
        chain[i] = theta
    return chain


def _likelihood_estimate(sim, theta, x0, eps, n_inner, rng, distance) -> float:
    xs = np.array([np.ravel(sim.simulate(theta, rng)) for _ in range(n_inner)])
    return float(np.mean(abc_distance(xs, x0, distance) <= eps))


def pseudo_marginal_mh_step(
    sim,
    x0,
    eps: float,
    n_inner: int,
    state: tuple[np.ndarray, float],
    proposal_std,
    rng: RngStream,
    distance: Union[str, Callable]="euclidean"
) -> tuple[np.ndarray, float]:
    """
    One pseudo-marginal Metropolis-Hastings step. The likelihood estimate
    L = fraction of n_inner simulations within eps is part of the state.

    Returns:
        tuple: the new (theta, L).
    """
    if n_inner < 1:
        raise ValueError("n_inner must be at least 1.")
    theta, lik = np.ravel(state[0]), state[1]
    std = np.broadcast_to(np.asarray(proposal_std, dtype=np.float64), theta.shape)
    candidate = theta + std * rng.normal(size=theta.size)
    log_p_new = sim.prior_log_prob(candidate)
    if not np.isfinite(log_p_new):
        return theta, lik
    lik_new = _likelihood_estimate(sim, candidate, x0, eps, n_inner, rng, distance)
    if lik_new == 0:
        return theta, lik
    with np.errstate(divide="ignore"):
        log_ratio = (
            np.log(lik_new) + log_p_new
            - np.log(lik) - sim.prior_log_prob(theta)
        )
    if np.log(rng.uniform()) < log_ratio:
        return candidate, lik_new
    return theta, lik


def pseudo_marginal_chain(
    sim,
    x0,
    eps: float,
    n_inner: int,
    proposal_std,
    theta_init,
    n_steps: int,
    rng: RngStream,
    distance: Union[str, Callable]="euclidean",
    init_budget: int=1_000_000
) -> Matrix:
    """Runs n_steps pseudo-marginal steps from theta_init (None: rejection ABC)."""
    if theta_init is None:
        theta_init = _initial_state(sim, x0, eps, rng, distance, init_budget)
    theta = np.array(theta_init, dtype=np.float64).ravel()
    if not np.isfinite(sim.prior_log_prob(theta)):
        raise InitializationError("theta_init lies outside the prior support.")
    lik = _likelihood_estimate(sim, theta, x0, eps, n_inner, rng, distance)
    chain = np.empty((n_steps, theta.size))
    for i in range(n_steps):
        theta, lik = pseudo_marginal_mh_step(
            sim, x0, eps, n_inner, (theta, lik), proposal_std, rng, distance
        )
        chain[i] = theta
    return chain


def _importance_weights(sim, thetas: Matrix, proposal) -> np.ndarray:
    """
    Normalized prior / proposal weights.

    Raises:
        DegeneratePopulationError: On infinite or all-zero weights.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = sim.prior_log_probs(thetas) - proposal.log_prob(thetas)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise DegeneratePopulationError(
            "Proposal density vanishes where the prior does not."
        )
    if np.all(log_w == -np.inf):
        raise DegeneratePopulationError("Every importance weight is zero.")
    return np.exp(log_w - logsumexp(log_w))


def is_abc(
    sim,
    x0,
    cfg: AbcConfig,
    proposal,
    n: int,
    rng: RngStream
) -> WeightedPopulation:
    """
    Importance-sampling ABC: every slot draws from the proposal until a
    simulation lands within eps; weights are prior / proposal.

    Args:
        proposal: Object with sample(n, rng) and log_prob(thetas).

    Raises:
        BudgetExhaustedError: If the budget is exhausted first.
        DegeneratePopulationError: On infinite importance weights.
    """
    thetas, _, n_simulated = _accept_loop(
        sim, x0, cfg, n, rng, lambda s: proposal.sample(1, s)[0]
    )
    weights = _importance_weights(sim, thetas, proposal)
    return WeightedPopulation(thetas, weights, n_simulated)


def _in_support_sampler(sim, proposal, max_tries: int=10_000) -> Callable:
    def propose(stream: RngStream) -> np.ndarray:
        for _ in range(max_tries):
            theta = proposal.sample(1, stream)[0]
            if np.isfinite(sim.prior_log_prob(theta)):
                return theta
        raise DegeneratePopulationError(
            "Perturbation kernel keeps leaving the prior support."
        )
    return propose


def smc_abc(
    sim,
    x0,
    schedule: list,
    n: int,
    rng: RngStream,
    cfg: Union[AbcConfig, None]=None,
    ess_min: Union[float, None]=None,
    perturb_scale: float=np.sqrt(2.0),
    resampling: str="multinomial",
    theta_true=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> tuple[WeightedPopulation, list[RoundTrace]]:
    """
    SMC-ABC. Round 1 is rejection ABC at schedule[0]; each later round
    draws from the weighted perturbation mixture of the previous
    population, accepts under its tolerance and reweights by
    prior / mixture. The population is resampled whenever its ESS falls
    below ess_min (default N/2).

    Args:
        schedule (list): Strictly decreasing tolerances.
        n (int): Population size, at least 2.
        cfg (AbcConfig): Distance and per-round budget.
        theta_true: If given, every trace records neg_log_true_params of
            the population.

    Raises:
        BudgetExhaustedError: With the completed round traces attached.
    """
    schedule = [float(e) for e in schedule]
    if not schedule or any(a <= b for a, b in zip(schedule, schedule[1:])):
        raise ValueError("The tolerance schedule must be strictly decreasing.")
    if n < 2:
        raise ValueError("SMC-ABC needs at least 2 particles.")
    cfg = cfg or AbcConfig()
    ess_min = n / 2.0 if ess_min is None else ess_min
    traces, cumulative, pop = [], 0, None
    for t, eps in enumerate(schedule, start=1):
        logger.info(f"Starting round {t} of SMC-ABC at tolerance {eps}")
        start = time.perf_counter()
        round_cfg = replace(cfg, tolerance=eps)
        try:
            if pop is None:
                thetas, n_sim = rejection_abc(sim, x0, round_cfg, n, rng)
                pop = WeightedPopulation.uniform(thetas, n_sim)
                proposal = "prior"
            else:
                mixture = PerturbationMixture.from_population(pop, perturb_scale)
                thetas, _, n_sim = _accept_loop(
                    sim, x0, round_cfg, n, rng, _in_support_sampler(sim, mixture)
                )
                weights = _importance_weights(sim, thetas, mixture)
                pop = WeightedPopulation(thetas, weights, n_sim)
                proposal = "perturbation_mixture"
        except BudgetExhaustedError as e:
            raise BudgetExhaustedError(
                f"Round {t}: {e}",
                partial=e.partial,
                n_simulated=cumulative + e.n_simulated,
                completed_rounds=traces
            ) from e
        cumulative += n_sim
        ess = ess_estimate(pop)
        trace = RoundTrace.from_samples(
            t, n_sim, cumulative, proposal, pop.params, pop.weights,
            ess=ess, tolerance=eps,
            neg_log_true_params=population_neg_log_true_params(pop, theta_true)
        )
        if ess < ess_min:
            idx = resample(pop.weights, n, rng, resampling)
            pop = WeightedPopulation.uniform(pop.params[idx], n_sim)
            trace.diagnostics["resampled"] = 1.0
        trace.wall_clock = time.perf_counter() - start
        traces.append(trace)
    pop.n_simulated = cumulative
    return pop, traces


def linear_regression_adjust(pop_params, pop_data, x0) -> Matrix:
    """
    Regression adjustment theta'_n = theta_n + A (x0 - x_n), where A is the
    least-squares slope of theta on x (with intercept). Rank-deficient
    designs are solved with a 1e-8 ridge.
    """
    thetas = as_matrix(pop_params, name="pop_params")
    xs = as_matrix(pop_data, name="pop_data")
    if xs.shape[0] != thetas.shape[0]:
        raise ValueError("pop_params and pop_data need the same rows.")
    design = np.hstack([xs, np.ones((xs.shape[0], 1))])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        gram = design.T @ design + 1e-8 * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ thetas)
    else:
        coef, *_ = np.linalg.lstsq(design, thetas, rcond=None)
    return thetas + (np.ravel(x0) - xs) @ coef[:-1]
