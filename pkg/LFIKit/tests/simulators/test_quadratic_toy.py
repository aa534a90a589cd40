import unittest
import numpy as np
from LFIKit.num_core import RngStream
from LFIKit.simulators import QuadraticToy

class TestQuadraticToy(unittest.TestCase):

    def test_symmetric_in_theta(self):
        sim = QuadraticToy(noise_std=0.01)
        a = sim.simulate([1.5], RngStream(0))
        b = sim.simulate([-1.5], RngStream(0))
        np.testing.assert_array_equal(a, b)
        self.assertAlmostEqual(a[0], 2.25, delta=0.05)

    def test_prior(self):
        sim = QuadraticToy()
        self.assertAlmostEqual(sim.prior_log_prob([0.0]), -0.5 * np.log(2.0 * np.pi))
        np.testing.assert_allclose(sim.prior_gaussian().cov, np.eye(1))
        self.assertEqual(sim.prior_sample(RngStream(1)).shape, (1,))

    def test_invalid_noise(self):
        with self.assertRaises(ValueError):
            QuadraticToy(noise_std=0.0)
