"""
Experiment pipeline behind the command line: reads and validates a JSON
config, runs the named algorithm on the named simulator and writes
posterior.csv, traces.jsonl, metrics.json, model.json and, last,
manifest.json into the output directory.

Every random draw comes from streams derived from the config seed:
stream 0 drives the algorithm, stream 1 simulates x0 from theta_true and
stream 2 draws the reported posterior samples. Repeating a (config, seed)
pair therefore reproduces every output file except the manifest's
timestamps.
"""
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Union
import csv, json, logging, os, threading, time
import numpy as np
from . import abc_samplers, seq_inference
from .classic_density import GaussianModel
from .constants import (
    ABC_ALGORITHMS,
    ALGORITHMS,
    CONFIG_SCHEMA_VERSION,
    EXIT_CODES,
    SIMULATORS,
    TOOLKIT_VERSION
)
from .errors import BudgetExhaustedError, ConfigError, RoundError
from .num_core import Matrix, RngStream
from .simulators import BaseSimulator
from .traces import RoundTrace, equal_weight_points, neg_log_true_params
from .utils import make_simulator, sha256_hex

CONFIG_KEYS: tuple[str, ...] = (
    "schema", "simulator", "algorithm", "seed", "output_dir",
    "theta_true", "observed"
)

# Algorithm-specific ABC settings and their defaults; the remaining keys
# of an ABC settings block go to AbcConfig.
ABC_EXTRAS: dict[str, dict] = {
    "rejection": {"n_samples": 1000, "regression_adjust": False},
    "smooth": {"n_samples": 1000},
    "mcmc-abc": {
        "n_steps": 10000,
        "burn_in": 0,
        "proposal_std": None,
        "theta_init": None,
        "n_inner": 1,
    },
    "is-abc": {"n_samples": 1000, "proposal_mean": None, "proposal_cov": None},
    "smc-abc": {
        "n_samples": 1000,
        "schedule": [2.0, 1.0, 0.5, 0.25],
        "ess_min": None,
        "perturb_scale": float(np.sqrt(2.0)),
        "resampling": "multinomial",
    },
}

ALGORITHM_STREAM, OBSERVED_STREAM, POSTERIOR_STREAM = 0, 1, 2


@dataclass
class ExperimentConfig:
    """
    Validated experiment config.

    Attributes:
        simulator (str): Registered simulator name.
        simulator_settings (dict): Its settings block.
        algorithm (str): One of constants.ALGORITHMS.
        algorithm_settings (dict): Its settings block.
        seed (int): Seed of every random stream.
        output_dir (str): Directory receiving the result files.
        theta_true (list): Optional true parameters.
        observed (list): Optional observed summaries x0.
        config_hash (str): sha256 of the config file bytes.
    """
    simulator: str
    simulator_settings: dict
    algorithm: str
    algorithm_settings: dict
    seed: int
    output_dir: str
    theta_true: Union[list, None] = None
    observed: Union[list, None] = None
    config_hash: str = ""


@dataclass
class RunOutcome:
    """What an algorithm run leaves behind for the output files."""
    samples: Matrix
    traces: list
    n_simulations: int
    weights: Union[np.ndarray, None] = None
    models: list = field(default_factory=list)
    terminated_early: bool = False
    metrics: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.terminated_early:
            return EXIT_CODES["terminated_early"]
        return EXIT_CODES["ok"]


class CountingSimulator(BaseSimulator):
    """Wraps a simulator and counts calls to simulate (thread-safe)."""

    def __init__(self, inner: BaseSimulator):
        self.inner = inner
        self.name = inner.name
        self.count = 0
        self._lock = threading.Lock()

    @property
    def param_dim(self) -> int:
        return self.inner.param_dim

    @property
    def data_dim(self) -> int:
        return self.inner.data_dim

    def prior_sample(self, rng: RngStream) -> np.ndarray:
        return self.inner.prior_sample(rng)

    def prior_log_prob(self, theta) -> float:
        return self.inner.prior_log_prob(theta)

    def prior_log_probs(self, thetas) -> np.ndarray:
        return self.inner.prior_log_probs(thetas)

    def prior_std(self) -> np.ndarray:
        return self.inner.prior_std()

    def prior_gaussian(self) -> Union[GaussianModel, None]:
        return self.inner.prior_gaussian()

    def exact_posterior(self, x0) -> GaussianModel:
        return self.inner.exact_posterior(x0)

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        with self._lock:
            self.count += 1
        return self.inner.simulate(theta, rng)


def _block(doc: dict, key: str, tag: str) -> tuple[str, dict]:
    """Reads {"name": ..., "settings": {...}} (or a bare name) from doc."""
    value = doc.get(key)
    if isinstance(value, str):
        return value, {}
    if not isinstance(value, dict) or not isinstance(value.get("name"), str):
        raise ConfigError(f"'{key}' needs a name.", tag)
    unknown = set(value) - {"name", "settings"}
    if unknown:
        raise ConfigError(f"Unknown keys in '{key}': {sorted(unknown)}", tag)
    settings = value.get("settings") or {}
    if not isinstance(settings, dict):
        raise ConfigError(f"'{key}.settings' must be an object.", tag)
    return value["name"], settings


def _vector(value, length: int, name: str, tag: str) -> Union[list, None]:
    if value is None:
        return None
    try:
        arr = np.asarray(value, dtype=np.float64).ravel()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{name}' must be a list of numbers.", tag) from e
    if arr.size != length or not np.all(np.isfinite(arr)):
        raise ConfigError(
            f"'{name}' must hold {length} finite numbers, got {arr.size}.", tag
        )
    return arr.tolist()


def parse_config(
    data: bytes,
    seed: Union[int, None]=None,
    output_dir: Union[str, None]=None
) -> ExperimentConfig:
    """
    Parses and validates config bytes. seed and output_dir override the
    config's values; the config hash always covers the original bytes.

    Raises:
        ConfigError: With a tag naming the failing part of the config.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Config is not valid JSON: {e}", "E_CONFIG_PARSE") from e
    if not isinstance(doc, dict):
        raise ConfigError("Config must be a JSON object.", "E_CONFIG_PARSE")
    unknown = set(doc) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {sorted(unknown)}", "E_CONFIG_FIELD")
    if doc.get("schema") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"Config schema must be {CONFIG_SCHEMA_VERSION}.", "E_CONFIG_SCHEMA"
        )

    sim_name, sim_settings = _block(doc, "simulator", "E_CONFIG_SIMULATOR")
    if sim_name not in SIMULATORS:
        raise ConfigError(f"Simulator {sim_name} is not supported.", "E_CONFIG_SIMULATOR")
    algorithm, algo_settings = _block(doc, "algorithm", "E_CONFIG_ALGORITHM")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"Algorithm {algorithm} is not supported.", "E_CONFIG_ALGORITHM")

    seed = doc.get("seed") if seed is None else seed
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("A non-negative integer seed is required.", "E_CONFIG_SEED")
    output_dir = output_dir or doc.get("output_dir") or "."

    try:
        sim = make_simulator(sim_name, sim_settings)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), "E_CONFIG_SIMULATOR") from e
    theta_true = _vector(doc.get("theta_true"), sim.param_dim, "theta_true", "E_CONFIG_THETA_TRUE")
    observed = _vector(doc.get("observed"), sim.data_dim, "observed", "E_CONFIG_OBSERVED")
    if theta_true is None and observed is None:
        raise ConfigError(
            "Either 'observed' or 'theta_true' must be given.", "E_CONFIG_OBSERVED"
        )
    cfg = ExperimentConfig(
        sim_name, sim_settings, algorithm, algo_settings, seed, output_dir,
        theta_true, observed, sha256_hex(data)
    )
    algorithm_settings(cfg, sim)
    return cfg


def load_config(
    path: str,
    seed: Union[int, None]=None,
    output_dir: Union[str, None]=None
) -> ExperimentConfig:
    """Reads and validates a config file (see parse_config)."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}", "E_CONFIG_PARSE") from e
    return parse_config(data, seed, output_dir)


def _abc_settings(
    algorithm: str,
    settings: dict,
    sim: BaseSimulator
) -> tuple[abc_samplers.AbcConfig, dict]:
    extras = dict(ABC_EXTRAS[algorithm])
    rest = {}
    for key, value in settings.items():
        if key in extras:
            extras[key] = value
        else:
            rest[key] = value
    abc_cfg = abc_samplers.AbcConfig.from_dict(rest)
    for key in ("n_samples", "n_steps", "n_inner"):
        if key in extras and not (isinstance(extras[key], int) and extras[key] >= 1):
            raise ValueError(f"{key} must be a positive integer.")
    if algorithm == "mcmc-abc":
        if not 0 <= extras["burn_in"] < extras["n_steps"]:
            raise ValueError("burn_in must lie in [0, n_steps).")
        if extras["proposal_std"] is None:
            extras["proposal_std"] = (0.5 * sim.prior_std()).tolist()
        if not np.isfinite(abc_cfg.tolerance):
            raise ValueError("MCMC-ABC needs a finite tolerance.")
    if algorithm == "smc-abc":
        schedule = [float(e) for e in extras["schedule"]]
        if not schedule or any(a <= b for a, b in zip(schedule, schedule[1:])):
            raise ValueError("The tolerance schedule must be strictly decreasing.")
        if extras["resampling"] not in abc_samplers.RESAMPLING_METHODS:
            raise ValueError(f"Resampling {extras['resampling']} is not supported.")
        if extras["n_samples"] < 2:
            raise ValueError("SMC-ABC needs at least 2 particles.")
    if algorithm == "smooth" and not abc_cfg.tolerance > 0:
        raise ValueError("Smooth rejection needs a positive tolerance.")
    if algorithm == "is-abc" and (extras["proposal_mean"] is None) != (
        extras["proposal_cov"] is None
    ):
        raise ValueError("proposal_mean and proposal_cov go together.")
    return abc_cfg, extras


def algorithm_settings(cfg: ExperimentConfig, sim: BaseSimulator):
    """
    Maps the algorithm settings block onto its settings object(s).

    Raises:
        ConfigError: E_CONFIG_SETTINGS on any invalid setting.
    """
    try:
        if cfg.algorithm in ABC_ALGORITHMS:
            return _abc_settings(cfg.algorithm, cfg.algorithm_settings, sim)
        if cfg.algorithm in ("snpe-a", "snpe-b"):
            return seq_inference.SnpeConfig.from_dict(cfg.algorithm_settings)
        return seq_inference.SnlConfig.from_dict(cfg.algorithm_settings)
    except (TypeError, ValueError) as e:
        raise ConfigError(
            f"Invalid {cfg.algorithm} settings: {e}", "E_CONFIG_SETTINGS"
        ) from e


def observed_data(cfg: ExperimentConfig, sim: BaseSimulator) -> np.ndarray:
    """x0 from the config, or one simulation at theta_true on stream 1."""
    if cfg.observed is not None:
        return np.array(cfg.observed)
    return np.ravel(
        sim.simulate(np.array(cfg.theta_true), RngStream(cfg.seed, OBSERVED_STREAM))
    )


def _single_trace(
    proposal: str,
    samples: Matrix,
    n_simulations: int,
    theta_true,
    weights: Union[np.ndarray, None]=None,
    **diagnostics
) -> RoundTrace:
    if theta_true is not None:
        points = samples if weights is None else equal_weight_points(samples, weights)
        diagnostics["neg_log_true_params"] = neg_log_true_params(points, theta_true)
    return RoundTrace.from_samples(
        1, n_simulations, n_simulations, proposal, samples, weights, **diagnostics
    )


def _run_abc(
    cfg: ExperimentConfig,
    sim: CountingSimulator,
    x0: np.ndarray,
    rng: RngStream,
    logger: logging.Logger
) -> RunOutcome:
    abc_cfg, extras = algorithm_settings(cfg, sim)
    theta_true, eps = cfg.theta_true, abc_cfg.tolerance
    if cfg.algorithm == "rejection":
        thetas, xs, n_sim = abc_samplers.rejection_abc_with_data(
            sim, x0, abc_cfg, extras["n_samples"], rng
        )
        if extras["regression_adjust"]:
            logger.info("Applying linear regression adjustment ...")
            thetas = abc_samplers.linear_regression_adjust(thetas, xs, x0)
        trace = _single_trace(
            "prior", thetas, n_sim, theta_true,
            tolerance=eps, acceptance_rate=extras["n_samples"] / n_sim
        )
        return RunOutcome(thetas, [trace], sim.count)
    if cfg.algorithm == "smooth":
        pop = abc_samplers.smooth_rejection_abc(
            sim, x0, abc_cfg.kernel, eps, extras["n_samples"], rng, abc_cfg.distance
        )
        trace = _single_trace(
            "prior", pop.params, pop.n_simulated, theta_true, pop.weights,
            tolerance=eps, ess=pop.ess
        )
        return RunOutcome(pop.params, [trace], sim.count, weights=pop.weights)
    if cfg.algorithm == "mcmc-abc":
        if extras["n_inner"] > 1:
            chain = abc_samplers.pseudo_marginal_chain(
                sim, x0, eps, extras["n_inner"], extras["proposal_std"],
                extras["theta_init"], extras["n_steps"], rng,
                abc_cfg.distance, abc_cfg.max_simulations
            )
        else:
            chain = abc_samplers.mcmc_abc_chain(
                sim, x0, eps, extras["proposal_std"], extras["theta_init"],
                extras["n_steps"], rng, abc_cfg.distance, abc_cfg.max_simulations
            )
        samples = chain[extras["burn_in"]:]
        moves = np.any(np.diff(chain, axis=0) != 0, axis=1)
        trace = _single_trace(
            "random_walk", samples, sim.count, theta_true,
            tolerance=eps, acceptance_rate=float(moves.mean()) if moves.size else 0.0
        )
        return RunOutcome(samples, [trace], sim.count)
    if cfg.algorithm == "is-abc":
        if extras["proposal_mean"] is None:
            proposal, name = abc_samplers.PriorProposal(sim), "prior"
        else:
            proposal = GaussianModel(
                np.array(extras["proposal_mean"], dtype=np.float64),
                np.array(extras["proposal_cov"], dtype=np.float64)
            )
            name = "gaussian"
        pop = abc_samplers.is_abc(sim, x0, abc_cfg, proposal, extras["n_samples"], rng)
        trace = _single_trace(
            name, pop.params, pop.n_simulated, theta_true, pop.weights,
            tolerance=eps, ess=pop.ess
        )
        return RunOutcome(pop.params, [trace], sim.count, weights=pop.weights)
    pop, traces = abc_samplers.smc_abc(
        sim, x0, extras["schedule"], extras["n_samples"], rng, abc_cfg,
        ess_min=extras["ess_min"],
        perturb_scale=extras["perturb_scale"],
        resampling=extras["resampling"],
        theta_true=theta_true,
        logger=logger
    )
    return RunOutcome(pop.params, traces, sim.count, weights=pop.weights)


def _run_neural(
    cfg: ExperimentConfig,
    sim: CountingSimulator,
    x0: np.ndarray,
    rng: RngStream,
    logger: logging.Logger
) -> RunOutcome:
    settings = algorithm_settings(cfg, sim)
    theta_true = cfg.theta_true
    post_rng = RngStream(cfg.seed, POSTERIOR_STREAM)
    if cfg.algorithm == "snpe-a":
        res = seq_inference.snpe_a_run(sim, x0, settings, rng, theta_true, logger)
        samples = res.posterior.sample(settings.n_posterior_samples, post_rng)
        return RunOutcome(
            samples, res.traces, sim.count,
            models=[res.model.to_dict(), res.posterior.to_dict()],
            terminated_early=res.terminated_early
        )
    if cfg.algorithm == "snpe-b":
        res = seq_inference.snpe_b_run(sim, x0, settings, rng, theta_true, logger)
        samples = res.posterior.sample(settings.n_posterior_samples, post_rng)
        return RunOutcome(
            samples, res.traces, sim.count,
            models=[res.model.to_dict(), res.posterior.to_dict()]
        )
    run = seq_inference.snl_run if cfg.algorithm == "snl" else seq_inference.maxvar_snl_run
    res = run(sim, x0, settings, rng, theta_true, logger)
    members = res.ensemble or [res.model]
    return RunOutcome(
        res.samples, res.traces, sim.count,
        models=[m.to_dict() for m in members]
    )


def run_algorithm(
    cfg: ExperimentConfig,
    logger: logging.Logger=logging.getLogger(__name__)
) -> RunOutcome:
    """
    Runs the configured algorithm and collects its outcome and metrics.

    Raises:
        LFIError: Whatever the algorithm raises at runtime.
    """
    sim = CountingSimulator(make_simulator(cfg.simulator, cfg.simulator_settings))
    x0 = observed_data(cfg, sim.inner)
    rng = RngStream(cfg.seed, ALGORITHM_STREAM)
    logger.info(f"Starting {cfg.algorithm} on {cfg.simulator} (seed {cfg.seed}) ...")
    if cfg.algorithm in ABC_ALGORITHMS:
        outcome = _run_abc(cfg, sim, x0, rng, logger)
    else:
        outcome = _run_neural(cfg, sim, x0, rng, logger)
    outcome.metrics["n_simulations"] = outcome.n_simulations
    outcome.metrics["terminated_early"] = outcome.terminated_early
    outcome.metrics["observed"] = x0.tolist()
    last = outcome.traces[-1].diagnostics if outcome.traces else {}
    if "mmd" in last:
        outcome.metrics["mmd"] = last["mmd"]
    if cfg.theta_true is not None:
        points = outcome.samples
        if outcome.weights is not None:
            points = equal_weight_points(outcome.samples, outcome.weights)
        outcome.metrics["neg_log_true_params"] = neg_log_true_params(
            points, cfg.theta_true
        )
    return outcome


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def write_posterior_csv(
    path: str,
    samples: Matrix,
    weights: Union[np.ndarray, None]=None
) -> None:
    """Columns theta_1..theta_d (plus weight), 17 significant digits."""
    header = [f"theta_{i + 1}" for i in range(samples.shape[1])]
    if weights is not None:
        header.append("weight")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(samples):
            values = [format_float(v) for v in row]
            if weights is not None:
                values.append(format_float(weights[i]))
            writer.writerow(values)


def write_traces(path: str, traces: list) -> None:
    """One JSON object per round."""
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")


def _write_json(path: str, doc) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _file_digest(path: str) -> str:
    with open(path, "rb") as f:
        return sha256_hex(f.read())


def write_manifest(
    out_dir: str,
    cfg: ExperimentConfig,
    files: list[str],
    started: datetime,
    wall_clock: float,
    exit_code: int
) -> str:
    """Writes manifest.json atomically, after every listed file exists."""
    manifest = {
        "schema": CONFIG_SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "toolkit_version": TOOLKIT_VERSION,
        "simulator": cfg.simulator,
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "exit_code": exit_code,
        "started_at": started.isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "wall_clock_seconds": wall_clock,
        "files": {name: _file_digest(os.path.join(out_dir, name)) for name in files},
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    _write_json(tmp, manifest)
    os.replace(tmp, path)
    return path


def run_experiment(
    cfg: ExperimentConfig,
    logger: logging.Logger=logging.getLogger(__name__)
) -> RunOutcome:
    """
    Runs the experiment and writes its result files. When a run fails
    after some rounds, the completed rounds' traces and a manifest with
    exit code 3 are written before the error propagates.

    Returns:
        RunOutcome: outcome; its exit_code is 0 or 4.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    try:
        outcome = run_algorithm(cfg, logger)
    except (RoundError, BudgetExhaustedError) as e:
        partial = getattr(e, "traces", None) or getattr(e, "completed_rounds", None)
        if partial:
            write_traces(os.path.join(cfg.output_dir, "traces.jsonl"), partial)
            write_manifest(
                cfg.output_dir, cfg, ["traces.jsonl"], started,
                time.perf_counter() - clock, EXIT_CODES["runtime_error"]
            )
        raise
    logger.info(f"Writing results to {cfg.output_dir} ...")
    files = ["posterior.csv", "traces.jsonl", "metrics.json"]
    write_posterior_csv(
        os.path.join(cfg.output_dir, "posterior.csv"), outcome.samples, outcome.weights
    )
    write_traces(os.path.join(cfg.output_dir, "traces.jsonl"), outcome.traces)
    _write_json(os.path.join(cfg.output_dir, "metrics.json"), outcome.metrics)
    if outcome.models:
        _write_json(os.path.join(cfg.output_dir, "model.json"), {"models": outcome.models})
        files.append("model.json")
    write_manifest(
        cfg.output_dir, cfg, files, started, time.perf_counter() - clock,
        outcome.exit_code
    )
    return outcome


def run_bench(
    configs_dir: str,
    out_dir: str,
    logger: logging.Logger=logging.getLogger(__name__)
) -> tuple[list[tuple], bool]:
    """
    Runs every *.json config of a directory (sorted by file name) into
    out_dir/<config name>/ and writes out_dir/curves.csv with one row per
    round: algorithm, seed, cumulative_sims, neg_log_true_params.

    Returns:
        tuple: (rows, whether any SNPE-A run terminated early).

    Raises:
        ConfigError: E_BENCH_EMPTY, E_BENCH_MISMATCH or a config's own tag.
    """
    try:
        names = sorted(n for n in os.listdir(configs_dir) if n.endswith(".json"))
    except OSError as e:
        raise ConfigError(f"Cannot list {configs_dir}: {e}", "E_BENCH_EMPTY") from e
    if not names:
        raise ConfigError(f"No configs found in {configs_dir}.", "E_BENCH_EMPTY")
    configs = [
        load_config(
            os.path.join(configs_dir, name),
            output_dir=os.path.join(out_dir, name[:-len(".json")])
        )
        for name in names
    ]
    first = configs[0]
    for cfg in configs:
        same = (
            cfg.simulator == first.simulator
            and cfg.simulator_settings == first.simulator_settings
            and cfg.theta_true == first.theta_true
        )
        if not same:
            raise ConfigError(
                "Bench configs must share simulator, settings and theta_true.",
                "E_BENCH_MISMATCH"
            )
    if first.theta_true is None:
        raise ConfigError("Bench configs need theta_true.", "E_BENCH_MISMATCH")

    rows, terminated = [], False
    for cfg in configs:
        outcome = run_experiment(cfg, logger)
        terminated |= outcome.terminated_early
        for trace in outcome.traces:
            value = trace.diagnostics.get("neg_log_true_params")
            if value is not None:
                rows.append(
                    (cfg.algorithm, cfg.seed, trace.cumulative_simulations, value)
                )
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "curves.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["algorithm", "seed", "cumulative_sims", "neg_log_true_params"])
        for algorithm, seed, sims, value in rows:
            writer.writerow([algorithm, seed, sims, format_float(value)])
    return rows, terminated
