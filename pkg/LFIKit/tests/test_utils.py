import logging
import os
import tempfile
import unittest
from unittest.mock import patch
import numpy as np
from LFIKit.utils import config
from LFIKit.utils import LOG_LEVELS, MODEL_KINDS, SIMULATORS
from LFIKit.mdn import GaussianMixture, snpea_correct
from LFIKit.classic_density import GaussianModel

from LFIKit.utils import (
    load_environment,
    make_simulator,
    model_from_dict,
    set_adam_defaults,
    set_log_level,
    set_threads,
    sha256_hex
)

class TestSetThreads(unittest.TestCase):
    def setUp(self):
        self.original_threads = config.THREADS

    def tearDown(self):
        config.THREADS = self.original_threads

    def test_set_threads_valid(self):
        set_threads(3)
        self.assertEqual(config.THREADS, 3)

    def test_set_threads_invalid(self):
        for value in (0, -2, 1.5, True, "4"):
            with self.assertRaises(ValueError):
                set_threads(value)

class TestSetAdamDefaults(unittest.TestCase):

    @patch('LFIKit.utils.config')
    def test_set_adam_defaults(self, mock_config):
        set_adam_defaults(lr=0.01, beta1=0.5)
        self.assertEqual(mock_config.ADAM_LR, 0.01)
        self.assertEqual(mock_config.ADAM_BETA1, 0.5)

    @patch('LFIKit.utils.config')
    def test_set_adam_defaults_keeps_unset(self, mock_config):
        mock_config.ADAM_EPS = 1e-8
        set_adam_defaults(lr=0.1)
        self.assertEqual(mock_config.ADAM_EPS, 1e-8)

    def test_set_adam_defaults_invalid(self):
        for kwargs in ({"lr": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0.0}):
            with self.assertRaises(ValueError):
                set_adam_defaults(**kwargs)

class TestSetLogLevel(unittest.TestCase):
    def setUp(self):
        self.original_level = config.LOG_LEVEL
        self.logger_level = logging.getLogger("LFIKit").level

    def tearDown(self):
        config.LOG_LEVEL = self.original_level
        logging.getLogger("LFIKit").setLevel(self.logger_level)

    def test_set_log_level_with_valid_level(self):
        for level in LOG_LEVELS:
            set_log_level(level.lower())
            self.assertEqual(config.LOG_LEVEL, level)
            self.assertEqual(logging.getLevelName(logging.getLogger("LFIKit").level), level)

    def test_set_log_level_with_invalid_level(self):
        with self.assertRaises(ValueError):
            set_log_level("VERBOSE")

class TestLoadEnvironment(unittest.TestCase):
    def setUp(self):
        self.original_threads = config.THREADS
        self.original_level = config.LOG_LEVEL

    def tearDown(self):
        config.THREADS = self.original_threads
        config.LOG_LEVEL = self.original_level
        logging.getLogger("LFIKit").setLevel(logging.NOTSET)

    @patch.dict(os.environ, {"LFI_THREADS": "2", "LFI_LOG_LEVEL": "info"})
    @patch('LFIKit.utils.load_dotenv')
    def test_reads_variables(self, mock_load_dotenv):
        load_environment()
        mock_load_dotenv.assert_called_once_with(None)
        self.assertEqual(config.THREADS, 2)
        self.assertEqual(config.LOG_LEVEL, "INFO")

    @patch.dict(os.environ, {"LFI_THREADS": "many"})
    @patch('LFIKit.utils.load_dotenv')
    def test_invalid_threads(self, mock_load_dotenv):
        with self.assertRaises(ValueError):
            load_environment()

    @patch.dict(os.environ, {}, clear=False)
    def test_reads_dotenv_file(self):
        os.environ.pop("LFI_THREADS", None)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, ".env")
            with open(path, "w") as f:
                f.write("LFI_THREADS=5\n")
            load_environment(path)
        self.assertEqual(config.THREADS, 5)

class TestMakeSimulator(unittest.TestCase):

    def test_every_registered_simulator(self):
        for name in SIMULATORS:
            sim = make_simulator(name)
            self.assertIsInstance(sim, SIMULATORS[name])
            self.assertEqual(sim.name, name)

    def test_settings_are_applied(self):
        sim = make_simulator("gaussian_toy", {"dim": 3, "noise_var": 0.5})
        self.assertEqual((sim.param_dim, sim.noise_var), (3, 0.5))

    def test_unknown_simulator(self):
        with self.assertRaises(ValueError):
            make_simulator("ricker")

    def test_unknown_setting(self):
        with self.assertRaises(ValueError):
            make_simulator("mg1", {"n_servers": 2})

class TestModelFromDict(unittest.TestCase):

    def test_corrected_mixture_kind(self):
        q = GaussianMixture([1.0], [[1.0]], [[[1.0]]])
        corrected = snpea_correct(q, GaussianModel(np.zeros(1), 4.0 * np.eye(1)))
        restored = model_from_dict(corrected.to_dict())
        self.assertIsInstance(restored, MODEL_KINDS["corrected_mixture"])
        np.testing.assert_allclose(restored.means, corrected.means)

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            model_from_dict({"kind": "nade"})

class TestSha256Hex(unittest.TestCase):

    def test_known_digest(self):
        self.assertEqual(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        )
