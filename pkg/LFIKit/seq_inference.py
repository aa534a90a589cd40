"""
Sequential neural inference: SNPE-A, SNPE-B and SNL (with an optional
MaxVar-acquisition variant), plus the axis-aligned slice sampler, the MMD
two-sample diagnostic and the posterior density of the true parameters.
"""
from dataclasses import dataclass, field, fields
from typing import Callable, Union
import logging
import time
import numpy as np
from scipy.spatial.distance import cdist, pdist
from .classic_density import GaussianModel
from .flows import MafModel, train_mle
from .mdn import (
    CorrectedMixture,
    GaussianMixture,
    MdnModel,
    snpea_correct,
    train_mdn
)
from .num_core import Matrix, RngStream, as_matrix
from .training import TrainConfig
from .traces import RoundTrace, neg_log_true_params
from .errors import (
    DegenerateAcquisitionError,
    DegenerateKernelError,
    DegenerateWeightsError,
    InitializationError,
    InsufficientDataError,
    LFIError,
    NonPositiveDefiniteError,
    NumericError,
    RoundError
)

LIKELIHOOD_MODELS: tuple[str, ...] = ("maf", "mdn")


def _from_dict(cls, settings: Union[dict, None]):
    settings = dict(settings or {})
    known = {f.name for f in fields(cls)}
    unknown = set(settings) - known
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} settings: {sorted(unknown)}")
    if "train" in settings:
        settings["train"] = TrainConfig.from_dict(settings["train"])
    if "hidden" in settings:
        settings["hidden"] = tuple(settings["hidden"])
    return cls(**settings)


@dataclass
class SnpeConfig:
    """
    Settings of SNPE-A and SNPE-B.

    Attributes:
        rounds (int): Number of rounds R.
        sims_per_round (int): Simulations per round M.
        n_components (int): Mixture components K of the MDN.
        hidden (tuple): MDN trunk sizes.
        train (TrainConfig): Training settings.
        proposal_scale (float): SNPE-A multiplies the moment-matched
            proposal covariance by this factor.
        n_posterior_samples (int): Draws recorded per round.
        warm_start (bool): Continue training the previous round's network
            instead of a fresh one.
        weight_ratio_threshold (float): SNPE-B flags rounds whose
            max/median importance-weight ratio exceeds this.
    """
    rounds: int = 2
    sims_per_round: int = 1000
    n_components: int = 8
    hidden: tuple = (50, 50)
    train: TrainConfig = field(default_factory=TrainConfig)
    proposal_scale: float = 1.0
    n_posterior_samples: int = 1000
    warm_start: bool = True
    weight_ratio_threshold: float = 10.0

    def __post_init__(self):
        if self.rounds < 1 or self.sims_per_round < 1:
            raise ValueError("rounds and sims_per_round must be at least 1.")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive.")

    @classmethod
    def from_dict(cls, settings: Union[dict, None]) -> "SnpeConfig":
        return _from_dict(cls, settings)


@dataclass
class SnlConfig:
    """
    Settings of SNL and MaxVar-SNL.

    Attributes:
        rounds (int): Number of rounds R.
        sims_per_round (int): Simulations per round M.
        model (str): Likelihood model, "maf" or "mdn".
        n_layers (int): MAF layers.
        hidden (tuple): Hidden sizes of every MADE (or the MDN trunk).
        n_components (int): MDN components when model is "mdn".
        train (TrainConfig): Training settings.
        burn_in (int): Slice-sampler burn-in per round.
        thin (int): Keep every thin-th slice-sampler state.
        n_posterior_samples (int): Posterior draws after the last round.
        warm_start (bool): Continue training across rounds.
        mmd_samples (int): Posterior-predictive MMD sample size in the
            last round (0 disables it).
        ensemble_size (int): MaxVar ensemble size.
        acquisitions (int): MaxVar acquisitions per round; the round's
            simulations are shared out among the acquired parameters.
        maxvar_starts (int): MaxVar multi-start count.
    """
    rounds: int = 3
    sims_per_round: int = 334
    model: str = "maf"
    n_layers: int = 5
    hidden: tuple = (50,)
    n_components: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    burn_in: int = 200
    thin: int = 10
    n_posterior_samples: int = 1000
    warm_start: bool = True
    mmd_samples: int = 200
    ensemble_size: int = 5
    acquisitions: int = 8
    maxvar_starts: int = 64

    def __post_init__(self):
        if self.rounds < 1 or self.sims_per_round < 1:
            raise ValueError("rounds and sims_per_round must be at least 1.")
        if self.model not in LIKELIHOOD_MODELS:
            raise ValueError(f"Likelihood model {self.model} is not supported.")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin must be >= 1 and burn_in >= 0.")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2.")

    @classmethod
    def from_dict(cls, settings: Union[dict, None]) -> "SnlConfig":
        return _from_dict(cls, settings)


@dataclass
class SnpeAResult:
    posterior: CorrectedMixture
    model: MdnModel
    traces: list
    terminated_early: bool = False


@dataclass
class SnpeBResult:
    posterior: GaussianMixture
    model: MdnModel
    traces: list


@dataclass
class SnlResult:
    """
    Attributes:
        model: Likelihood model q(x | theta) (the first member for MaxVar).
        samples (Matrix): Posterior draws after the last round.
        traces (list[RoundTrace]): One trace per round.
        sampler (Callable): sampler(n, rng) draws from the final posterior.
        ensemble (list): All ensemble members (MaxVar only).
    """
    model: object
    samples: Matrix
    traces: list
    sampler: Callable
    ensemble: list = field(default_factory=list)


def slice_sample_axis(
    target_log_prob: Callable[[np.ndarray], float],
    theta_init,
    n: int,
    widths,
    rng: RngStream,
    burn_in: int=0,
    thin: int=1,
    max_steps_out: int=20
) -> Matrix:
    """
    Axis-aligned slice sampling with stepping-out and shrinkage. Every
    sweep updates each coordinate once, in a fixed order.

    Args:
        target_log_prob: Unnormalized log-density of a vector.
        theta_init: Starting state.
        n (int): Number of states returned.
        widths: Initial bracket width per axis.
        rng (RngStream): Random stream.
        burn_in (int): Sweeps discarded before recording.
        thin (int): Sweeps per recorded state.
        max_steps_out (int): Cap on stepping-out moves per side.

    Returns:
        Matrix: (n, D) chain states.

    Raises:
        InitializationError: If the target is -inf at theta_init.
        NumericError: If the target returns NaN.
    """
    x = np.array(theta_init, dtype=np.float64).ravel()
    widths = np.broadcast_to(np.asarray(widths, dtype=np.float64), x.shape)
    log_p = float(target_log_prob(x))
    if np.isnan(log_p):
        raise NumericError("Target is NaN at the initial state.")
    if log_p == -np.inf:
        raise InitializationError("Target density is zero at theta_init.")

    def evaluate(point: np.ndarray) -> float:
        value = float(target_log_prob(point))
        if np.isnan(value):
            raise NumericError("Target returned NaN.")
        return value

    out = np.empty((n, x.size))
    for sweep in range(burn_in + n * thin):
        for d in range(x.size):
            log_u = log_p + np.log(rng.uniform())
            left, right = x.copy(), x.copy()
            r = rng.uniform()
            left[d] = x[d] - r * widths[d]
            right[d] = x[d] + (1.0 - r) * widths[d]
            for _ in range(max_steps_out):
                if evaluate(left) <= log_u:
                    break
                left[d] -= widths[d]
            for _ in range(max_steps_out):
                if evaluate(right) <= log_u:
                    break
                right[d] += widths[d]
            candidate = x.copy()
            while True:
                candidate[d] = rng.uniform(left[d], right[d])
                log_p_new = evaluate(candidate)
                if log_p_new > log_u:
                    break
                if candidate[d] > x[d]:
                    right[d] = candidate[d]
                elif candidate[d] < x[d]:
                    left[d] = candidate[d]
                else:
                    raise NumericError("Slice shrank to the current point.")
            x, log_p = candidate, log_p_new
        done = sweep - burn_in + 1
        if done > 0 and done % thin == 0:
            out[done // thin - 1] = x
    return out


def _gaussian_gram(a: Matrix, b: Matrix, bandwidth: float) -> np.ndarray:
    return np.exp(-0.5 * cdist(a, b, "sqeuclidean") / bandwidth ** 2)


def median_bandwidth(X, Y) -> float:
    """
    Median pairwise distance of the pooled sample.

    Raises:
        DegenerateKernelError: If the median distance is zero.
    """
    pooled = np.vstack([as_matrix(X, name="X"), as_matrix(Y, name="Y")])
    bandwidth = float(np.median(pdist(pooled)))
    if not bandwidth > 0:
        raise DegenerateKernelError("Median pairwise distance is zero.")
    return bandwidth


def _mmd_from_gram(gram: np.ndarray, m: int, biased: bool) -> float:
    kxx, kyy, kxy = gram[:m, :m], gram[m:, m:], gram[:m, m:]
    n = gram.shape[0] - m
    if biased:
        return float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())
    return float(
        (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2.0 * kxy.mean()
    )


def mmd_statistic(X, Y, biased: bool=False) -> float:
    """
    Squared MMD between two samples with a Gaussian kernel whose bandwidth
    is the median pairwise distance of the pooled sample. The unbiased
    estimate (default) needs at least 2 points per sample and may be
    slightly negative.

    Raises:
        DegenerateKernelError: If every pooled point is identical.
    """
    X, Y = as_matrix(X, name="X"), as_matrix(Y, name="Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("X and Y must have the same dimension.")
    if not biased and min(X.shape[0], Y.shape[0]) < 2:
        raise InsufficientDataError("Unbiased MMD needs 2 points per sample.")
    pooled = np.vstack([X, Y])
    gram = _gaussian_gram(pooled, pooled, median_bandwidth(X, Y))
    return _mmd_from_gram(gram, X.shape[0], biased)


@dataclass
class MmdTestResult:
    statistic: float
    threshold: float
    p_value: float

    @property
    def rejected(self) -> bool:
        return self.statistic > self.threshold


def mmd_permutation_test(
    X,
    Y,
    rng: RngStream,
    n_permutations: int=200,
    level: float=0.05
) -> MmdTestResult:
    """
    Permutation two-sample test on the unbiased MMD statistic. The
    bandwidth of the pooled sample is shared by every permutation.

    Returns:
        MmdTestResult: statistic, (1 - level) permutation quantile and
            p-value.
    """
    X, Y = as_matrix(X, name="X"), as_matrix(Y, name="Y")
    pooled = np.vstack([X, Y])
    gram = _gaussian_gram(pooled, pooled, median_bandwidth(X, Y))
    m = X.shape[0]
    statistic = _mmd_from_gram(gram, m, biased=False)
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        idx = rng.permutation(pooled.shape[0])
        null[i] = _mmd_from_gram(gram[np.ix_(idx, idx)], m, biased=False)
    threshold = float(np.quantile(null, 1.0 - level))
    p_value = float((1 + np.sum(null >= statistic)) / (1 + n_permutations))
    return MmdTestResult(statistic, threshold, p_value)


def _log_variance(log_values: np.ndarray) -> np.ndarray:
    """Log of the across-ensemble variance of exp(log_values) (rows = members)."""
    top = np.max(log_values, axis=0)
    finite = np.isfinite(top)
    shift = np.where(finite, top, 0.0)
    scaled = np.exp(log_values - shift)
    var = np.var(scaled, axis=0, ddof=1)
    with np.errstate(divide="ignore"):
        return np.where(finite & (var > 0), 2.0 * shift + np.log(var), -np.inf)


def _maxvar_objective(ensemble: list, sim, x0) -> Callable:
    x0 = np.ravel(x0)

    def objective(thetas: Matrix) -> np.ndarray:
        prior = sim.prior_log_probs(thetas)
        inside = np.isfinite(prior)
        logs = np.full((len(ensemble), thetas.shape[0]), -np.inf)
        if inside.any():
            xs = np.tile(x0, (int(inside.sum()), 1))
            for i, model in enumerate(ensemble):
                logs[i, inside] = model.log_prob(xs, thetas[inside]) + prior[inside]
        return _log_variance(logs)
    return objective


def maxvar_acquire(
    ensemble: list,
    sim,
    x0,
    rng: RngStream,
    n_starts: int=64,
    n_sweeps: int=20
) -> np.ndarray:
    """
    Parameter maximizing the across-ensemble variance of q(x0 | theta) p(theta).

    Starts from n_starts prior draws and refines them all at once by a
    coordinate search whose per-axis step halves whenever neither
    direction improves. The variance is handled on the log scale.

    Args:
        ensemble (list): Models with log_prob(x, context=theta).
        sim: Simulator providing the prior.

    Raises:
        DegenerateAcquisitionError: If the variance is zero at every start.
    """
    if len(ensemble) < 2:
        raise ValueError("MaxVar needs an ensemble of at least 2 models.")
    objective = _maxvar_objective(ensemble, sim, x0)
    points = sim.prior_sample_n(n_starts, rng)
    values = objective(points)
    if np.all(values == -np.inf):
        raise DegenerateAcquisitionError(
            "Ensemble variance is zero at every start."
        )
    steps = np.tile(0.25 * sim.prior_std(), (n_starts, 1))
    for _ in range(n_sweeps):
        for d in range(points.shape[1]):
            improved = np.zeros(n_starts, dtype=bool)
            for sign in (1.0, -1.0):
                trial = points.copy()
                trial[:, d] += sign * steps[:, d]
                trial_values = objective(trial)
                better = trial_values > values
                points[better] = trial[better]
                values[better] = trial_values[better]
                improved |= better
            steps[~improved, d] *= 0.5
    return points[int(np.argmax(values))].copy()


def _round_trace(
    r: int,
    n_sim: int,
    cumulative: int,
    proposal: str,
    samples: Matrix,
    theta_true,
    **diagnostics
) -> RoundTrace:
    if theta_true is not None:
        diagnostics["neg_log_true_params"] = neg_log_true_params(samples, theta_true)
    return RoundTrace.from_samples(
        r, n_sim, cumulative, proposal, samples, **diagnostics
    )


def _sample_in_support(sim, proposal, n: int, rng: RngStream) -> Matrix:
    """n proposal draws, redrawing those outside the prior support."""
    out = np.empty((0, sim.param_dim))
    for _ in range(1000):
        draws = proposal.sample(n - out.shape[0], rng)
        keep = np.isfinite(sim.prior_log_probs(draws))
        out = np.vstack([out, draws[keep]])
        if out.shape[0] == n:
            return out
    raise RoundError(
        "Proposal keeps leaving the prior support.", round_index=0, traces=[]
    )


def snpe_a_run(
    sim,
    x0,
    cfg: SnpeConfig,
    rng: RngStream,
    theta_true=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> SnpeAResult:
    """
    SNPE-A. Each round draws M parameters from the proposal (the prior in
    round 1, afterwards the moment-matched Gaussian of the previous
    posterior), trains the MDN on this round's pairs and corrects its
    mixture at x0 by prior / proposal. If a correction is not
    positive-definite the run stops and returns the previous round's
    posterior with terminated_early set.

    Raises:
        TrainingError: If round-1 training fails.
    """
    prior = sim.prior_gaussian()
    model = MdnModel.create(
        sim.data_dim, sim.param_dim, rng, cfg.n_components, cfg.hidden
    )
    proposal, posterior, traces, cumulative = None, None, [], 0
    for r in range(1, cfg.rounds + 1):
        logger.info(f"Starting round {r} of SNPE-A ...")
        start = time.perf_counter()
        if proposal is None:
            thetas = sim.prior_sample_n(cfg.sims_per_round, rng)
        else:
            thetas = _sample_in_support(sim, proposal, cfg.sims_per_round, rng)
        xs = sim.simulate_batch(thetas, rng)
        cumulative += cfg.sims_per_round
        if r > 1 and not cfg.warm_start:
            model = MdnModel.create(
                sim.data_dim, sim.param_dim, rng, cfg.n_components, cfg.hidden
            )
        train_mdn(model, xs, thetas, cfg.train, rng, logger=logger)
        q = model.mixture_at(x0)
        try:
            if proposal is None:
                corrected = CorrectedMixture(q.weights, q.means, q.covs)
            else:
                corrected = snpea_correct(q, proposal, prior)
        except NonPositiveDefiniteError as e:
            if posterior is None:
                raise
            logger.warning(
                f"Correction failed in round {r} (component {e.component}); "
                "returning the previous round's posterior"
            )
            samples = posterior.sample(cfg.n_posterior_samples, rng)
            trace = _round_trace(
                r, cfg.sims_per_round, cumulative, "moment_matched_gaussian",
                samples, theta_true, terminated_early=1.0,
                failed_component=e.component
            )
            trace.wall_clock = time.perf_counter() - start
            traces.append(trace)
            return SnpeAResult(posterior, model, traces, terminated_early=True)
        posterior = corrected
        samples = posterior.sample(cfg.n_posterior_samples, rng)
        trace = _round_trace(
            r, cfg.sims_per_round, cumulative,
            "prior" if proposal is None else "moment_matched_gaussian",
            samples, theta_true
        )
        trace.wall_clock = time.perf_counter() - start
        traces.append(trace)
        matched = posterior.moment_matched()
        proposal = GaussianModel(matched.mean, cfg.proposal_scale * matched.cov)
    return SnpeAResult(posterior, model, traces)


def snpe_b_run(
    sim,
    x0,
    cfg: SnpeConfig,
    rng: RngStream,
    theta_true=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> SnpeBResult:
    """
    SNPE-B. Parameters of round r > 1 come from the previous round's MDN
    at x0 and are weighted by prior / proposal (scaled to mean 1); round 1
    uses the prior with unit weights. The estimate is q(theta | x0).

    Raises:
        RoundError: If a round's importance weights are degenerate.
    """
    model = MdnModel.create(
        sim.data_dim, sim.param_dim, rng, cfg.n_components, cfg.hidden
    )
    proposal, traces, cumulative = None, [], 0
    for r in range(1, cfg.rounds + 1):
        logger.info(f"Starting round {r} of SNPE-B ...")
        start = time.perf_counter()
        diagnostics = {}
        if proposal is None:
            thetas = sim.prior_sample_n(cfg.sims_per_round, rng)
            weights = np.ones(cfg.sims_per_round)
        else:
            try:
                thetas = _sample_in_support(sim, proposal, cfg.sims_per_round, rng)
            except RoundError as e:
                raise RoundError(str(e), round_index=r, traces=traces) from e
            log_w = sim.prior_log_probs(thetas) - proposal.log_prob(thetas)
            if not np.all(np.isfinite(log_w)):
                raise RoundError(
                    f"Non-finite importance weights in round {r}.",
                    round_index=r,
                    traces=traces
                )
            weights = np.exp(log_w - log_w.max())
            weights = weights / weights.mean()
            ratio = float(weights.max() / np.median(weights))
            diagnostics = {
                "weight_ratio": ratio,
                "weight_ess": float(weights.sum() ** 2 / np.sum(weights ** 2)),
                "weight_ratio_exceeded": float(ratio > cfg.weight_ratio_threshold),
            }
        xs = sim.simulate_batch(thetas, rng)
        cumulative += cfg.sims_per_round
        if r > 1 and not cfg.warm_start:
            model = MdnModel.create(
                sim.data_dim, sim.param_dim, rng, cfg.n_components, cfg.hidden
            )
        try:
            train_mdn(model, xs, thetas, cfg.train, rng, weights=weights, logger=logger)
        except DegenerateWeightsError as e:
            raise RoundError(str(e), round_index=r, traces=traces) from e
        proposal = model.mixture_at(x0)
        samples = proposal.sample(cfg.n_posterior_samples, rng)
        trace = _round_trace(
            r, cfg.sims_per_round, cumulative,
            "prior" if r == 1 else "mdn_at_x0",
            samples, theta_true, **diagnostics
        )
        trace.weights = weights
        trace.wall_clock = time.perf_counter() - start
        traces.append(trace)
    return SnpeBResult(proposal, model, traces)


def _new_likelihood_model(sim, cfg: SnlConfig, rng: RngStream):
    if cfg.model == "maf":
        return MafModel.create(
            sim.data_dim, rng, context_dim=sim.param_dim,
            n_layers=cfg.n_layers, hidden=cfg.hidden
        )
    return MdnModel.create(
        sim.param_dim, sim.data_dim, rng, cfg.n_components, cfg.hidden
    )


def _train_likelihood(model, xs, thetas, cfg: SnlConfig, rng, logger):
    if isinstance(model, MafModel):
        train_mle(model, xs, cfg.train, rng, context=thetas, logger=logger)
    else:
        train_mdn(model, thetas, xs, cfg.train, rng, logger=logger)


def _model_draws(model, thetas: Matrix, rng: RngStream) -> Matrix:
    """One draw of x ~ q(x | theta) per row of thetas."""
    if isinstance(model, MafModel):
        return model.sample(thetas.shape[0], thetas, rng)
    return np.vstack([model.sample(1, t, rng) for t in thetas])


def _posterior_log_prob(models: list, sim, x0) -> Callable:
    """log of the ensemble-mean likelihood at x0 plus the log prior."""
    x0 = np.ravel(x0)
    log_m = np.log(len(models))

    def target(theta: np.ndarray) -> float:
        prior = sim.prior_log_prob(theta)
        if not np.isfinite(prior):
            return -np.inf
        logs = np.array([m.log_prob(x0, theta)[0] for m in models])
        top = logs.max()
        return float(top + np.log(np.sum(np.exp(logs - top))) - log_m + prior)
    return target


def _best_start(models: list, sim, x0, thetas: Matrix) -> np.ndarray:
    target = _posterior_log_prob(models, sim, x0)
    values = np.array([target(t) for t in thetas])
    return thetas[int(np.argmax(values))]


def _snl_loop(
    sim,
    x0,
    cfg: SnlConfig,
    rng: RngStream,
    theta_true,
    logger: logging.Logger,
    acquire: Union[Callable, None]=None
) -> SnlResult:
    n_models = cfg.ensemble_size if acquire is not None else 1
    models = [_new_likelihood_model(sim, cfg, child) for child in rng.spawn(n_models)]
    widths = sim.prior_std()
    all_thetas = np.empty((0, sim.param_dim))
    all_xs = np.empty((0, sim.data_dim))
    traces, samples, cumulative = [], None, 0
    name = "SNL" if acquire is None else "MaxVar-SNL"
    for r in range(1, cfg.rounds + 1):
        logger.info(f"Starting round {r} of {name} ...")
        start = time.perf_counter()
        if r == 1:
            thetas, proposal = sim.prior_sample_n(cfg.sims_per_round, rng), "prior"
        elif acquire is not None:
            thetas, proposal = acquire(models, rng), "maxvar"
        else:
            thetas, proposal = samples, "posterior_mcmc"
        xs = sim.simulate_batch(thetas, rng)
        cumulative += cfg.sims_per_round
        all_thetas = np.vstack([all_thetas, thetas])
        all_xs = np.vstack([all_xs, xs])
        if r > 1 and not cfg.warm_start:
            models = [
                _new_likelihood_model(sim, cfg, child)
                for child in rng.spawn(n_models)
            ]
        try:
            for model, child in zip(models, rng.spawn(n_models)):
                _train_likelihood(model, all_xs, all_thetas, cfg, child, logger)
            n_draw = (
                cfg.sims_per_round if r < cfg.rounds else cfg.n_posterior_samples
            )
            samples = slice_sample_axis(
                _posterior_log_prob(models, sim, x0),
                _best_start(models, sim, x0, all_thetas),
                n_draw,
                widths,
                rng,
                burn_in=cfg.burn_in,
                thin=cfg.thin
            )
        except (NumericError, InitializationError) as e:
            raise RoundError(
                f"Round {r} of {name} failed: {e}", round_index=r, traces=traces
            ) from e
        diagnostics = {"training_set_size": float(all_thetas.shape[0])}
        if r == cfg.rounds and cfg.mmd_samples > 1:
            check = samples[:cfg.mmd_samples]
            try:
                diagnostics["mmd"] = mmd_statistic(
                    sim.simulate_batch(check, rng), _model_draws(models[0], check, rng)
                )
            except LFIError as e:
                logger.warning(f"Posterior-predictive MMD skipped: {e}")
        trace = _round_trace(
            r, cfg.sims_per_round, cumulative, proposal, samples, theta_true,
            **diagnostics
        )
        trace.wall_clock = time.perf_counter() - start
        traces.append(trace)

    final_target = _posterior_log_prob(models, sim, x0)
    last = samples[-1]

    def sampler(n: int, sampler_rng: RngStream) -> Matrix:
        return slice_sample_axis(
            final_target, last, n, widths, sampler_rng,
            burn_in=cfg.burn_in, thin=cfg.thin
        )
    ensemble = models if acquire is not None else []
    return SnlResult(models[0], samples, traces, sampler, ensemble)


def snl_run(
    sim,
    x0,
    cfg: SnlConfig,
    rng: RngStream,
    theta_true=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> SnlResult:
    """
    SNL. Each round simulates M parameters (prior draws in round 1,
    slice-sampler draws from q(x0 | theta) p(theta) afterwards), retrains
    q(x | theta) on all pairs simulated so far and refreshes the sampler.

    Raises:
        RoundError: If MCMC meets a non-finite target.
    """
    return _snl_loop(sim, x0, cfg, rng, theta_true, logger)


def maxvar_snl_run(
    sim,
    x0,
    cfg: SnlConfig,
    rng: RngStream,
    theta_true=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> SnlResult:
    """
    SNL with MaxVar acquisition: an ensemble of likelihood models stands
    in for the posterior over network weights. After round 1, every round
    acquires cfg.acquisitions parameters with maxvar_acquire and shares
    the round's M simulations out among them.
    """
    def acquire(models: list, acquire_rng: RngStream) -> Matrix:
        n_points = min(cfg.acquisitions, cfg.sims_per_round)
        points = np.array([
            maxvar_acquire(models, sim, x0, child, n_starts=cfg.maxvar_starts)
            for child in acquire_rng.spawn(n_points)
        ])
        repeats = np.full(n_points, cfg.sims_per_round // n_points)
        repeats[:cfg.sims_per_round % n_points] += 1
        return np.repeat(points, repeats, axis=0)
    return _snl_loop(sim, x0, cfg, rng, theta_true, logger, acquire)
