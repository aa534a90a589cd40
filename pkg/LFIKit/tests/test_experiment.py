import json
import os
import shutil
import tempfile
import unittest
import numpy as np
from LFIKit.errors import BudgetExhaustedError, ConfigError
from LFIKit.experiment import (
    CountingSimulator,
    load_config,
    observed_data,
    parse_config,
    run_algorithm,
    run_bench,
    run_experiment
)
from LFIKit.num_core import RngStream
from LFIKit.simulators import GaussianToy


def rejection_config(**overrides) -> dict:
    doc = {
        "schema": 1,
        "simulator": {"name": "gaussian_toy", "settings": {}},
        "algorithm": {
            "name": "rejection",
            "settings": {"tolerance": 1.0, "n_samples": 100},
        },
        "seed": 3,
        "theta_true": [0.5],
    }
    doc.update(overrides)
    return doc


def encode(doc: dict) -> bytes:
    return json.dumps(doc).encode("utf-8")


class TestParseConfig(unittest.TestCase):

    def assertTag(self, data: bytes, tag: str):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(data)
        self.assertEqual(ctx.exception.tag, tag)

    def test_valid_config(self):
        cfg = parse_config(encode(rejection_config()))
        self.assertEqual((cfg.simulator, cfg.algorithm, cfg.seed), ("gaussian_toy", "rejection", 3))
        self.assertEqual(cfg.theta_true, [0.5])
        self.assertEqual(len(cfg.config_hash), 64)

    def test_bare_names_and_overrides(self):
        doc = rejection_config(simulator="gaussian_toy", algorithm="rejection")
        cfg = parse_config(encode(doc), seed=11, output_dir="results")
        self.assertEqual(cfg.seed, 11)
        self.assertEqual(cfg.output_dir, "results")
        self.assertEqual(cfg.algorithm_settings, {})

    def test_hash_covers_original_bytes(self):
        data = encode(rejection_config())
        self.assertEqual(parse_config(data).config_hash, parse_config(data, seed=9).config_hash)
        self.assertNotEqual(
            parse_config(data).config_hash,
            parse_config(encode(rejection_config(seed=4))).config_hash
        )

    def test_error_tags(self):
        self.assertTag(b"{not json", "E_CONFIG_PARSE")
        self.assertTag(b"[1, 2]", "E_CONFIG_PARSE")
        self.assertTag(encode(rejection_config(extra=1)), "E_CONFIG_FIELD")
        self.assertTag(encode(rejection_config(schema=2)), "E_CONFIG_SCHEMA")
        self.assertTag(encode(rejection_config(simulator="ricker")), "E_CONFIG_SIMULATOR")
        self.assertTag(
            encode(rejection_config(simulator={"name": "mg1", "settings": {"servers": 2}})),
            "E_CONFIG_SIMULATOR"
        )
        self.assertTag(encode(rejection_config(algorithm="snpe-c")), "E_CONFIG_ALGORITHM")
        self.assertTag(encode(rejection_config(seed=-1)), "E_CONFIG_SEED")
        self.assertTag(encode(rejection_config(seed=True)), "E_CONFIG_SEED")
        self.assertTag(encode(rejection_config(theta_true=[0.5, 1.0])), "E_CONFIG_THETA_TRUE")
        self.assertTag(encode(rejection_config(theta_true=None)), "E_CONFIG_OBSERVED")

    def test_invalid_settings(self):
        bad = [
            {"name": "rejection", "settings": {"n_samples": 0}},
            {"name": "rejection", "settings": {"bandwidth": 1.0}},
            {"name": "smc-abc", "settings": {"schedule": [1.0, 2.0]}},
            {"name": "mcmc-abc", "settings": {}},
            {"name": "smooth", "settings": {"tolerance": 0.0}},
            {"name": "is-abc", "settings": {"proposal_mean": [0.0]}},
            {"name": "snl", "settings": {"model": "nade"}},
            {"name": "snpe-a", "settings": {"train": {"momentum": 0.9}}},
        ]
        for algorithm in bad:
            with self.subTest(algorithm=algorithm):
                self.assertTag(encode(rejection_config(algorithm=algorithm)), "E_CONFIG_SETTINGS")

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(os.path.join(tempfile.gettempdir(), "no-such-config.json"))
        self.assertEqual(ctx.exception.tag, "E_CONFIG_PARSE")


class TestObservedData(unittest.TestCase):

    def test_observed_wins(self):
        cfg = parse_config(encode(rejection_config(observed=[2.0])))
        np.testing.assert_array_equal(observed_data(cfg, GaussianToy()), [2.0])

    def test_simulated_from_theta_true(self):
        cfg = parse_config(encode(rejection_config()))
        a = observed_data(cfg, GaussianToy())
        b = observed_data(cfg, GaussianToy())
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (1,))


class TestCountingSimulator(unittest.TestCase):

    def test_counts_every_simulation(self):
        sim = CountingSimulator(GaussianToy(dim=2))
        sim.simulate_batch(np.zeros((7, 2)), RngStream(0))
        sim.simulate([0.0, 0.0], RngStream(1))
        self.assertEqual(sim.count, 8)
        self.assertEqual((sim.param_dim, sim.data_dim, sim.name), (2, 2, "gaussian_toy"))


class TestRunExperiment(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def run_config(self, doc: dict, name: str):
        cfg = parse_config(encode(doc), output_dir=os.path.join(self.tmp, name))
        return cfg, run_experiment(cfg)

    def read(self, name: str, file: str) -> bytes:
        with open(os.path.join(self.tmp, name, file), "rb") as f:
            return f.read()

    def test_writes_result_files(self):
        cfg, outcome = self.run_config(rejection_config(), "a")
        self.assertEqual(outcome.exit_code, 0)
        manifest = json.loads(self.read("a", "manifest.json"))
        self.assertEqual(manifest["config_hash"], cfg.config_hash)
        self.assertEqual(manifest["exit_code"], 0)
        self.assertEqual(sorted(manifest["files"]), ["metrics.json", "posterior.csv", "traces.jsonl"])
        lines = self.read("a", "posterior.csv").decode().split("\n")
        self.assertEqual(lines[0], "theta_1")
        self.assertEqual(len([line for line in lines[1:] if line]), 100)
        metrics = json.loads(self.read("a", "metrics.json"))
        self.assertEqual(metrics["n_simulations"], outcome.n_simulations)
        self.assertIn("neg_log_true_params", metrics)
        trace = json.loads(self.read("a", "traces.jsonl").decode().splitlines()[0])
        self.assertEqual(trace["round"], 1)
        self.assertNotIn("wall_clock", trace)

    def test_repeated_runs_are_byte_identical(self):
        doc = rejection_config(algorithm={
            "name": "smc-abc",
            "settings": {"schedule": [2.0, 1.0], "n_samples": 60},
        })
        self.run_config(doc, "first")
        self.run_config(doc, "second")
        for file in ("posterior.csv", "traces.jsonl", "metrics.json"):
            self.assertEqual(self.read("first", file), self.read("second", file))
        header = self.read("first", "posterior.csv").decode().splitlines()[0]
        self.assertEqual(header, "theta_1,weight")

    def test_budget_failure_keeps_completed_rounds(self):
        doc = rejection_config(
            theta_true=None,
            observed=[0.0],
            algorithm={
                "name": "smc-abc",
                "settings": {"schedule": [3.0, 0.001], "n_samples": 50, "max_simulations": 200},
            }
        )
        cfg = parse_config(encode(doc), output_dir=os.path.join(self.tmp, "budget"))
        with self.assertRaises(BudgetExhaustedError):
            run_experiment(cfg)
        manifest = json.loads(self.read("budget", "manifest.json"))
        self.assertEqual(manifest["exit_code"], 3)
        self.assertEqual(list(manifest["files"]), ["traces.jsonl"])
        self.assertEqual(len(self.read("budget", "traces.jsonl").decode().splitlines()), 1)
        self.assertFalse(os.path.exists(os.path.join(self.tmp, "budget", "posterior.csv")))

    def test_neural_run_stores_models(self):
        doc = rejection_config(algorithm={
            "name": "snpe-b",
            "settings": {
                "rounds": 1,
                "sims_per_round": 100,
                "n_components": 2,
                "hidden": [8],
                "train": {"batch_size": 50, "max_epochs": 2},
                "n_posterior_samples": 50,
            },
        })
        cfg = parse_config(encode(doc))
        outcome = run_algorithm(cfg)
        self.assertEqual([m["kind"] for m in outcome.models], ["mdn", "mixture"])
        self.assertEqual(outcome.samples.shape, (50, 1))
        self.assertEqual(outcome.metrics["n_simulations"], 100)


class TestRunBench(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.configs = os.path.join(self.tmp, "configs")
        os.makedirs(self.configs)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def write(self, name: str, doc: dict):
        with open(os.path.join(self.configs, name), "w") as f:
            json.dump(doc, f)

    def test_curves(self):
        self.write("a_rejection.json", rejection_config())
        self.write("b_smc.json", rejection_config(algorithm={
            "name": "smc-abc",
            "settings": {"schedule": [2.0, 1.0], "n_samples": 40},
        }))
        out = os.path.join(self.tmp, "bench")
        rows, terminated = run_bench(self.configs, out)
        self.assertFalse(terminated)
        self.assertEqual([r[0] for r in rows], ["rejection", "smc-abc", "smc-abc"])
        with open(os.path.join(out, "curves.csv")) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "algorithm,seed,cumulative_sims,neg_log_true_params")
        self.assertEqual(len(lines), 4)
        self.assertTrue(os.path.exists(os.path.join(out, "b_smc", "manifest.json")))

    def test_empty_directory(self):
        with self.assertRaises(ConfigError) as ctx:
            run_bench(self.configs, os.path.join(self.tmp, "bench"))
        self.assertEqual(ctx.exception.tag, "E_BENCH_EMPTY")

    def test_mismatched_configs(self):
        self.write("a.json", rejection_config())
        self.write("b.json", rejection_config(theta_true=[0.0]))
        with self.assertRaises(ConfigError) as ctx:
            run_bench(self.configs, os.path.join(self.tmp, "bench"))
        self.assertEqual(ctx.exception.tag, "E_BENCH_MISMATCH")


if __name__ == "__main__":
    unittest.main()
