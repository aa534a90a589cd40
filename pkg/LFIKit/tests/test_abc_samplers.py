import unittest
from unittest.mock import patch
import numpy as np
from LFIKit import config
from LFIKit.abc_samplers import (
    AbcConfig,
    PerturbationMixture,
    PriorProposal,
    WeightedPopulation,
    ess_estimate,
    is_abc,
    linear_regression_adjust,
    mcmc_abc_chain,
    population_neg_log_true_params,
    pseudo_marginal_chain,
    pseudo_marginal_mh_step,
    rejection_abc,
    rejection_abc_with_data,
    resample,
    smc_abc,
    smooth_rejection_abc
)
from LFIKit.classic_density import GaussianModel
from LFIKit.errors import (
    BudgetExhaustedError,
    DegeneratePopulationError,
    InitializationError
)
from LFIKit.num_core import RngStream
from LFIKit.simulators import GaussianToy, Mg1Sim

X0 = np.array([1.0])


class TestAbcConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = AbcConfig()
        self.assertEqual(cfg.tolerance, float("inf"))
        self.assertEqual(cfg.distance, "euclidean")

    def test_from_dict(self):
        cfg = AbcConfig.from_dict({"tolerance": 0.5, "distance": "max"})
        self.assertEqual((cfg.tolerance, cfg.distance), (0.5, "max"))
        with self.assertRaises(ValueError):
            AbcConfig.from_dict({"epsilon": 0.5})

    def test_rejects_bad_values(self):
        for settings in ({"tolerance": -1.0}, {"max_simulations": 0}, {"kernel": "triangle"}):
            with self.assertRaises(ValueError):
                AbcConfig(**settings)


class TestRejectionAbc(unittest.TestCase):

    def setUp(self):
        self.sim = GaussianToy()

    def test_infinite_tolerance_accepts_everything(self):
        thetas, n_sim = rejection_abc(self.sim, X0, AbcConfig(), 50, RngStream(0))
        self.assertEqual(thetas.shape, (50, 1))
        self.assertEqual(n_sim, 50)

    def test_accepted_data_within_tolerance(self):
        cfg = AbcConfig(tolerance=0.3)
        thetas, xs, n_sim = rejection_abc_with_data(self.sim, X0, cfg, 40, RngStream(1))
        self.assertTrue(np.all(np.abs(xs - X0) <= 0.3))
        self.assertGreaterEqual(n_sim, 40)
        self.assertEqual(thetas.shape, (40, 1))

    def test_small_tolerance_approaches_posterior(self):
        thetas, _ = rejection_abc(self.sim, X0, AbcConfig(tolerance=0.1), 2000, RngStream(2))
        exact = self.sim.exact_posterior(X0)
        self.assertAlmostEqual(thetas.mean(), exact.mean[0], delta=0.05)
        self.assertAlmostEqual(thetas.var(), exact.cov[0, 0], delta=0.08)

    def test_zero_tolerance_exhausts_budget(self):
        cfg = AbcConfig(tolerance=0.0, max_simulations=300, batch_size=64)
        with self.assertRaises(BudgetExhaustedError) as ctx:
            rejection_abc(self.sim, X0, cfg, 5, RngStream(3))
        self.assertEqual(ctx.exception.n_simulated, 300)
        self.assertEqual(len(ctx.exception.partial[0]), 0)

    def test_independent_of_thread_count(self):
        cfg = AbcConfig(tolerance=0.5, batch_size=32)
        with patch.object(config, "THREADS", 1):
            serial, n1 = rejection_abc(self.sim, X0, cfg, 30, RngStream(4))
        with patch.object(config, "THREADS", 4):
            threaded, n4 = rejection_abc(self.sim, X0, cfg, 30, RngStream(4))
        np.testing.assert_array_equal(serial, threaded)
        self.assertEqual(n1, n4)

    def test_rejects_empty_request(self):
        with self.assertRaises(ValueError):
            rejection_abc(self.sim, X0, AbcConfig(), 0, RngStream(5))


class TestSmoothRejectionAbc(unittest.TestCase):

    def test_uniform_kernel_is_indicator(self):
        pop = smooth_rejection_abc(GaussianToy(), X0, "uniform", 0.5, 200, RngStream(6))
        self.assertIsInstance(pop, WeightedPopulation)
        self.assertEqual(pop.n_simulated, 200)
        nonzero = pop.weights[pop.weights > 0]
        np.testing.assert_allclose(nonzero, np.full(nonzero.size, 1.0 / nonzero.size))

    def test_gaussian_kernel_weights_positive(self):
        pop = smooth_rejection_abc(GaussianToy(), X0, "gaussian", 0.5, 100, RngStream(7))
        self.assertTrue(np.all(pop.weights > 0))
        self.assertAlmostEqual(pop.weights.sum(), 1.0)

    def test_all_zero_weights(self):
        with self.assertRaises(DegeneratePopulationError):
            smooth_rejection_abc(GaussianToy(), X0, "epanechnikov", 1e-12, 50, RngStream(8))

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            smooth_rejection_abc(GaussianToy(), X0, "uniform", 0.0, 10, RngStream(9))
        with self.assertRaises(ValueError):
            smooth_rejection_abc(GaussianToy(), X0, "cosine", 1.0, 10, RngStream(9))


class TestMcmcAbc(unittest.TestCase):

    def test_infinite_tolerance_samples_prior(self):
        chain = mcmc_abc_chain(
            GaussianToy(), X0, float("inf"), 1.0, [0.0], 5000, RngStream(10)
        )
        self.assertEqual(chain.shape, (5000, 1))
        self.assertAlmostEqual(chain.mean(), 0.0, delta=0.15)
        self.assertAlmostEqual(chain.var(), 1.0, delta=0.2)

    def test_chain_stays_within_tolerance(self):
        sim = GaussianToy()
        chain = mcmc_abc_chain(sim, X0, 0.5, 0.5, None, 300, RngStream(11))
        self.assertEqual(chain.shape, (300, 1))
        self.assertTrue(np.all(np.isfinite(chain)))

    def test_start_outside_support(self):
        with self.assertRaises(InitializationError):
            mcmc_abc_chain(Mg1Sim(standardize=False), np.zeros(5), 1.0, 0.1, [5.0, 1.0, 0.1], 10, RngStream(12))

    def test_small_tolerance_posterior_mean(self):
        means = [
            mcmc_abc_chain(GaussianToy(), X0, 0.1, 1.0, [0.5], 100_000, RngStream(seed)).mean()
            for seed in range(3)
        ]
        self.assertAlmostEqual(np.median(means), 0.5, delta=0.05)


class TestPseudoMarginal(unittest.TestCase):

    def test_zero_estimate_keeps_state(self):
        state = (np.array([0.2]), 0.5)
        theta, lik = pseudo_marginal_mh_step(GaussianToy(), X0, 0.0, 3, state, 1.0, RngStream(13))
        np.testing.assert_array_equal(theta, [0.2])
        self.assertEqual(lik, 0.5)

    def test_infinite_tolerance_samples_prior(self):
        chain = pseudo_marginal_chain(
            GaussianToy(), X0, float("inf"), 2, 1.0, [0.0], 3000, RngStream(14)
        )
        self.assertAlmostEqual(chain.mean(), 0.0, delta=0.2)

    def test_rejects_empty_inner_loop(self):
        with self.assertRaises(ValueError):
            pseudo_marginal_mh_step(GaussianToy(), X0, 1.0, 0, (np.zeros(1), 1.0), 1.0, RngStream(15))

    def test_single_inner_simulation_matches_mcmc_abc(self):
        sim = GaussianToy()
        pseudo = pseudo_marginal_chain(sim, X0, 0.25, 1, 1.0, [0.5], 100_000, RngStream(30))
        plain = mcmc_abc_chain(sim, X0, 0.25, 1.0, [0.5], 100_000, RngStream(31))
        self.assertAlmostEqual(pseudo.mean(), plain.mean(), delta=0.05)


class TestIsAbc(unittest.TestCase):

    def test_prior_proposal_gives_equal_weights(self):
        sim = GaussianToy()
        pop = is_abc(sim, X0, AbcConfig(tolerance=0.5), PriorProposal(sim), 60, RngStream(16))
        np.testing.assert_allclose(pop.weights, np.full(60, 1.0 / 60))
        self.assertAlmostEqual(pop.ess, 60.0)

    def test_wide_proposal(self):
        sim = GaussianToy()
        proposal = GaussianModel(np.array([0.5]), np.array([[4.0]]))
        pop = is_abc(sim, X0, AbcConfig(tolerance=0.2), proposal, 400, RngStream(17))
        self.assertAlmostEqual(pop.mean()[0], 0.5, delta=0.15)
        self.assertLess(pop.ess, 400.0)


class TestSmcAbc(unittest.TestCase):

    def setUp(self):
        self.sim = GaussianToy()

    def test_rounds_and_accounting(self):
        pop, traces = smc_abc(
            self.sim, X0, [1.0, 0.5, 0.25], 200, RngStream(18), theta_true=[0.5]
        )
        self.assertEqual([t.round_index for t in traces], [1, 2, 3])
        self.assertEqual(
            [t.cumulative_simulations for t in traces],
            list(np.cumsum([t.n_simulations for t in traces]))
        )
        self.assertEqual(pop.n_simulated, traces[-1].cumulative_simulations)
        self.assertEqual(traces[0].proposal, "prior")
        self.assertEqual(traces[1].proposal, "perturbation_mixture")
        self.assertIn("neg_log_true_params", traces[-1].diagnostics)
        self.assertAlmostEqual(pop.mean()[0], 0.5, delta=0.15)

    def test_conjugate_mean_and_cost(self):
        schedule, n = [2.0, 1.0, 0.5, 0.25], 1000
        means = []
        for seed in range(3):
            pop, traces = smc_abc(self.sim, X0, schedule, n, RngStream(seed))
            means.append(pop.mean()[0])
            _, wide = rejection_abc(self.sim, X0, AbcConfig(tolerance=2.0), n, RngStream(seed))
            self.assertEqual(traces[0].n_simulations, wide)
            self.assertGreaterEqual(pop.n_simulated, wide + (len(schedule) - 1) * n)
        self.assertAlmostEqual(np.median(means), 0.5, delta=0.07)

    def test_single_round_is_rejection_abc(self):
        pop, traces = smc_abc(self.sim, X0, [0.5], 300, RngStream(25))
        thetas, n_sim = rejection_abc(self.sim, X0, AbcConfig(tolerance=0.5), 300, RngStream(25))
        np.testing.assert_array_equal(pop.params, thetas)
        self.assertEqual(pop.n_simulated, n_sim)
        self.assertNotIn("resampled", traces[0].diagnostics)

    def test_schedule_must_decrease(self):
        with self.assertRaises(ValueError):
            smc_abc(self.sim, X0, [1.0, 1.0], 20, RngStream(19))

    def test_budget_error_carries_completed_rounds(self):
        cfg = AbcConfig(max_simulations=300)
        with self.assertRaises(BudgetExhaustedError) as ctx:
            smc_abc(self.sim, X0, [float("inf"), 0.01], 200, RngStream(20), cfg)
        self.assertEqual(len(ctx.exception.completed_rounds), 1)
        self.assertEqual(ctx.exception.n_simulated, 500)

    def test_systematic_resampling(self):
        pop, traces = smc_abc(
            self.sim, X0, [1.0, 0.5], 100, RngStream(21),
            ess_min=100.0, resampling="systematic"
        )
        self.assertEqual(traces[-1].diagnostics.get("resampled"), 1.0)
        np.testing.assert_allclose(pop.weights, np.full(100, 0.01))


class TestPopulationHelpers(unittest.TestCase):

    def test_ess(self):
        self.assertAlmostEqual(ess_estimate(WeightedPopulation.uniform(np.zeros((8, 1)))), 8.0)
        pop = WeightedPopulation(np.arange(3.0)[:, np.newaxis], [0.0, 1.0, 0.0])
        self.assertAlmostEqual(ess_estimate(pop), 1.0)

    def test_degenerate_weights(self):
        with self.assertRaises(DegeneratePopulationError):
            WeightedPopulation(np.zeros((2, 1)), [0.0, 0.0])

    def test_resample(self):
        rng = RngStream(22)
        for method in ("multinomial", "systematic"):
            np.testing.assert_array_equal(resample([0.0, 1.0, 0.0], 5, rng, method), np.ones(5))
        with self.assertRaises(ValueError):
            resample([1.0], 1, rng, "stratified")

    def test_perturbation_mixture_single_centre(self):
        mixture = PerturbationMixture([[1.0, 2.0]], [1.0], [0.5, 2.0])
        expected = GaussianModel(np.array([1.0, 2.0]), np.diag([0.25, 4.0])).log_prob([[0.0, 0.0]])
        np.testing.assert_allclose(mixture.log_prob([[0.0, 0.0]]), expected)

    def test_neg_log_true_params_needs_theta(self):
        pop = WeightedPopulation.uniform(RngStream(23).normal(size=(50, 1)))
        self.assertIsNone(population_neg_log_true_params(pop, None))
        self.assertTrue(np.isfinite(population_neg_log_true_params(pop, [0.0])))
        collapsed = WeightedPopulation.uniform(np.zeros((50, 1)))
        self.assertIsNone(population_neg_log_true_params(collapsed, [0.0]))


class TestLinearRegressionAdjust(unittest.TestCase):

    def test_exact_linear_relation(self):
        xs = np.linspace(-1, 1, 20)[:, np.newaxis]
        thetas = 2.0 * xs + 1.0
        adjusted = linear_regression_adjust(thetas, xs, [0.5])
        np.testing.assert_allclose(adjusted, np.full((20, 1), 2.0), atol=1e-10)

    def test_shrinks_wide_tolerance_posterior(self):
        sim = GaussianToy()
        thetas, xs, _ = rejection_abc_with_data(sim, X0, AbcConfig(tolerance=1.0), 2000, RngStream(26))
        adjusted = linear_regression_adjust(thetas, xs, X0)
        self.assertLess(abs(adjusted.var() - 0.5), abs(thetas.var() - 0.5))
        self.assertAlmostEqual(adjusted.var(), 0.5, delta=0.05)
        self.assertAlmostEqual(adjusted.mean(), 0.5, delta=0.05)

    def test_rank_deficient_design(self):
        xs = np.full((10, 1), 3.0)
        thetas = RngStream(24).normal(size=(10, 1))
        adjusted = linear_regression_adjust(thetas, xs, [3.0])
        np.testing.assert_allclose(adjusted, thetas)


if __name__ == "__main__":
    unittest.main()
