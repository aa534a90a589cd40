import argparse, json, logging, os, re, sys
from typing import Union
from . import config, utils
from .constants import EXIT_CODES, STANDARDIZED_SIMULATORS, TOOLKIT_VERSION
from .errors import ConfigError, LFIError
from .experiment import load_config, run_bench, run_experiment
from .model_store import ModelStore
from .simulators import calibrate_standardization
from .simulators.standardization import write_constants


def error_tag(error: Exception) -> str:
    """E_<AREA>_<REASON> tag of an exception."""
    if isinstance(error, ConfigError):
        return error.tag
    if isinstance(error, LFIError):
        name = re.sub(r"Error$", "", type(error).__name__)
        return "E_RUNTIME_" + re.sub(r"(?<!^)(?=[A-Z])", "_", name).upper()
    return "E_RUNTIME_INTERNAL"


def report_error(error: Exception) -> None:
    """Writes the single machine-parsable error line to stderr."""
    message = " ".join(str(error).split())
    print(f"{error_tag(error)}: {message}", file=sys.stderr, flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfikit",
        description="Likelihood-free inference experiments."
    )
    parser.add_argument("--version", action="version", version=TOOLKIT_VERSION)
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="INFO with -v, DEBUG with -vv."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment config.")
    run.add_argument("--config", required=True, help="Experiment JSON.")
    run.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")
    run.add_argument("--out", default=None, help="Output directory.")
    run.add_argument("--store", default=None, help="sqlite model store to register the run in.")

    bench = sub.add_parser("bench", help="Run a directory of configs and write curves.csv.")
    bench.add_argument("--configs", required=True, help="Directory of experiment JSONs.")
    bench.add_argument("--out", default=None, help="Output directory (default: <configs>/bench).")

    sub.add_parser("selftest", help="Run the test suite under coverage.")

    calibrate = sub.add_parser("calibrate", help="Compute summary standardization constants.")
    calibrate.add_argument("--simulator", required=True, choices=STANDARDIZED_SIMULATORS)
    calibrate.add_argument("--n", type=int, default=10000, help="Prior-predictive simulations.")
    calibrate.add_argument("--seed", type=int, default=0)
    calibrate.add_argument("--write", action="store_true", help="Store the constants in the package.")
    return parser


def configure_logging(verbose: int) -> logging.Logger:
    logger = logging.getLogger("LFIKit")
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    level = config.LOG_LEVEL
    if verbose == 1:
        level = "INFO"
    elif verbose > 1:
        level = "DEBUG"
    logger.setLevel(level)
    return logger


def _register(store_path: str, cfg, exit_code: int, models: list) -> None:
    store = ModelStore(store_path)
    try:
        run_id = store.add_run(
            cfg.config_hash, cfg.simulator, cfg.algorithm, cfg.seed, exit_code
        )
        for doc in models:
            store.add_model(run_id, doc)
    finally:
        store.close()


def command_run(args: argparse.Namespace, logger: logging.Logger) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    outcome = run_experiment(cfg, logger.getChild("experiment"))
    if args.store:
        _register(args.store, cfg, outcome.exit_code, outcome.models)
    if outcome.terminated_early:
        print(
            "E_RUNTIME_TERMINATED_EARLY: SNPE-A correction failed; "
            "the previous round's posterior was written.",
            file=sys.stderr, flush=True
        )
    return outcome.exit_code


def command_bench(args: argparse.Namespace, logger: logging.Logger) -> int:
    out = args.out or os.path.join(args.configs, "bench")
    rows, terminated = run_bench(args.configs, out, logger.getChild("experiment"))
    logger.info(f"Wrote {len(rows)} curve points to {out}")
    return EXIT_CODES["terminated_early"] if terminated else EXIT_CODES["ok"]


def command_selftest(args: argparse.Namespace, logger: logging.Logger) -> int:
    from ._selftest_script import run_selftest
    report = run_selftest()
    print(json.dumps(report, sort_keys=True))
    if report["errors"] or report["failures"]:
        return EXIT_CODES["runtime_error"]
    return EXIT_CODES["ok"]


def command_calibrate(args: argparse.Namespace, logger: logging.Logger) -> int:
    sim = utils.make_simulator(args.simulator, {"standardize": False})
    logger.info(f"Calibrating {args.simulator} on {args.n} simulations ...")
    entry = calibrate_standardization(sim, n=args.n, seed=args.seed)
    if args.write:
        write_constants(args.simulator, entry)
    print(json.dumps(entry, sort_keys=True))
    return EXIT_CODES["ok"]


COMMANDS = {
    "run": command_run,
    "bench": command_bench,
    "selftest": command_selftest,
    "calibrate": command_calibrate
}


def main(argv: Union[list[str], None]=None) -> int:
    """Entry point for the lfikit command."""
    args = build_parser().parse_args(argv)
    try:
        utils.load_environment()
    except ValueError as e:
        report_error(ConfigError(str(e), "E_CONFIG_ENVIRONMENT"))
        return EXIT_CODES["config_error"]
    logger = configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args, logger)
    except ConfigError as e:
        report_error(e)
        return EXIT_CODES["config_error"]
    except (LFIError, ValueError, ArithmeticError, RuntimeError, OSError) as e:
        logger.debug("Run failed", exc_info=True)
        report_error(e)
        return EXIT_CODES["runtime_error"]


if __name__ == "__main__":
    sys.exit(main())
