import io
import json
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch
import numpy as np
from LFIKit import cli
from LFIKit.errors import (
    BudgetExhaustedError,
    ConfigError,
    NonPositiveDefiniteError,
    NumericError,
    RoundError
)
from LFIKit.experiment import RunOutcome
from LFIKit.model_store import ModelStore


class TestErrorTag(unittest.TestCase):

    def test_tags(self):
        self.assertEqual(cli.error_tag(ConfigError("x", "E_CONFIG_SEED")), "E_CONFIG_SEED")
        self.assertEqual(cli.error_tag(NumericError("x")), "E_RUNTIME_NUMERIC")
        self.assertEqual(cli.error_tag(RoundError("x", 2, [])), "E_RUNTIME_ROUND")
        self.assertEqual(cli.error_tag(BudgetExhaustedError("x")), "E_RUNTIME_BUDGET_EXHAUSTED")
        self.assertEqual(
            cli.error_tag(NonPositiveDefiniteError("x", 0)), "E_RUNTIME_NON_POSITIVE_DEFINITE"
        )
        self.assertEqual(cli.error_tag(KeyError("x")), "E_RUNTIME_INTERNAL")

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_report_error_is_one_line(self, mock_stderr):
        cli.report_error(ConfigError("first\nsecond", "E_CONFIG_PARSE"))
        self.assertEqual(mock_stderr.getvalue(), "E_CONFIG_PARSE: first second\n")


class TestMain(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.config = {
            "schema": 1,
            "simulator": "gaussian_toy",
            "algorithm": {"name": "rejection", "settings": {"tolerance": 1.0, "n_samples": 50}},
            "seed": 0,
            "theta_true": [0.0],
        }

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def write_config(self, doc: dict, name: str="config.json") -> str:
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            json.dump(doc, f)
        return path

    def test_run(self):
        out = os.path.join(self.tmp, "out")
        code = cli.main(["run", "--config", self.write_config(self.config), "--out", out])
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(os.path.join(out, "manifest.json")))

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_unknown_simulator(self, mock_stderr):
        self.config["simulator"] = "ricker"
        code = cli.main(["run", "--config", self.write_config(self.config)])
        self.assertEqual(code, 2)
        self.assertTrue(mock_stderr.getvalue().startswith("E_CONFIG_SIMULATOR:"))

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_budget_exhausted(self, mock_stderr):
        self.config["algorithm"] = {
            "name": "rejection",
            "settings": {"tolerance": 0.0, "n_samples": 5, "max_simulations": 100},
        }
        out = os.path.join(self.tmp, "out")
        code = cli.main(["run", "--config", self.write_config(self.config), "--out", out])
        self.assertEqual(code, 3)
        self.assertIn("E_RUNTIME_BUDGET_EXHAUSTED:", mock_stderr.getvalue())

    @patch("sys.stderr", new_callable=io.StringIO)
    @patch("LFIKit.cli.run_experiment")
    def test_terminated_early(self, mock_run, mock_stderr):
        mock_run.return_value = RunOutcome(np.zeros((1, 1)), [], 10, terminated_early=True)
        code = cli.main(["run", "--config", self.write_config(self.config)])
        self.assertEqual(code, 4)
        self.assertIn("E_RUNTIME_TERMINATED_EARLY", mock_stderr.getvalue())

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_snpe_a_failed_correction_exit_code(self, mock_stderr):
        doc = {
            "schema": 1,
            "simulator": "quadratic_toy",
            "algorithm": {
                "name": "snpe-a",
                "settings": {
                    "rounds": 3, "sims_per_round": 500,
                    "n_components": 1, "proposal_scale": 0.25,
                },
            },
            "seed": 0,
            "observed": [1.0],
        }
        out = os.path.join(self.tmp, "out")
        code = cli.main(["run", "--config", self.write_config(doc), "--out", out])
        self.assertEqual(code, 4)
        self.assertIn("E_RUNTIME_TERMINATED_EARLY", mock_stderr.getvalue())
        with open(os.path.join(out, "traces.jsonl")) as f:
            self.assertEqual(len(f.readlines()), 2)
        self.assertTrue(os.path.exists(os.path.join(out, "posterior.csv")))

    def test_store_registers_run(self):
        db_path = os.path.join(self.tmp, "runs.db")
        out = os.path.join(self.tmp, "out")
        cli.main(["run", "--config", self.write_config(self.config), "--out", out, "--store", db_path])
        with open(os.path.join(out, "manifest.json")) as f:
            config_hash = json.load(f)["config_hash"]
        store = ModelStore(db_path)
        try:
            runs = store.get_runs_by_config_hash(config_hash)
        finally:
            store.close()
        self.assertEqual(len(runs), 1)
        self.assertEqual(runs[0]["exit_code"], 0)

    def test_bench(self):
        self.write_config(self.config, "a.json")
        self.config["seed"] = 1
        self.write_config(self.config, "b.json")
        self.assertEqual(cli.main(["bench", "--configs", self.tmp]), 0)
        self.assertTrue(os.path.exists(os.path.join(self.tmp, "bench", "curves.csv")))

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_bench_without_configs(self, mock_stderr):
        self.assertEqual(cli.main(["bench", "--configs", self.tmp]), 2)
        self.assertTrue(mock_stderr.getvalue().startswith("E_BENCH_EMPTY:"))

    @patch("sys.stdout", new_callable=io.StringIO)
    @patch("LFIKit._selftest_script.run_selftest")
    def test_selftest(self, mock_selftest, mock_stdout):
        mock_selftest.return_value = {"tests_ran_n": 3, "errors": [], "failures": [], "coverage": 90.0}
        self.assertEqual(cli.main(["selftest"]), 0)
        self.assertEqual(json.loads(mock_stdout.getvalue())["tests_ran_n"], 3)
        mock_selftest.return_value = {"tests_ran_n": 3, "errors": [("t", "tb")], "failures": [], "coverage": 90.0}
        self.assertEqual(cli.main(["selftest"]), 3)

    @patch("sys.stdout", new_callable=io.StringIO)
    def test_calibrate(self, mock_stdout):
        code = cli.main(["calibrate", "--simulator", "mg1", "--n", "20"])
        self.assertEqual(code, 0)
        entry = json.loads(mock_stdout.getvalue())
        self.assertEqual(len(entry["mean"]), 5)
        self.assertEqual(entry["n_simulations"], 20)

    @patch("sys.stderr", new_callable=io.StringIO)
    def test_calibrate_needs_standardized_simulator(self, mock_stderr):
        with self.assertRaises(SystemExit):
            cli.main(["calibrate", "--simulator", "gaussian_toy"])

    @patch.dict(os.environ, {"LFI_THREADS": "zero"})
    @patch("sys.stderr", new_callable=io.StringIO)
    def test_bad_environment(self, mock_stderr):
        self.assertEqual(cli.main(["run", "--config", "unused.json"]), 2)
        self.assertTrue(mock_stderr.getvalue().startswith("E_CONFIG_ENVIRONMENT:"))


if __name__ == "__main__":
    unittest.main()
