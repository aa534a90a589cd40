import unittest
from unittest.mock import patch
import numpy as np
from LFIKit.errors import NumericError, ShapeError
from LFIKit.num_core import (
    AdamState,
    MaskedLayer,
    RngStream,
    adam_step,
    as_context,
    as_matrix,
    finite_diff_grad,
    flatten_grads,
    masked_affine_apply,
    parallel_map
)


class TestAsMatrix(unittest.TestCase):

    def test_vector_becomes_single_row(self):
        self.assertEqual(as_matrix([1.0, 2.0, 3.0]).shape, (1, 3))

    def test_wrong_width(self):
        with self.assertRaises(ShapeError):
            as_matrix(np.zeros((2, 3)), cols=2)

    def test_non_finite_entry_reports_index(self):
        with self.assertRaises(NumericError) as ctx:
            as_matrix([[0.0, 1.0], [np.nan, 2.0]])
        self.assertEqual(ctx.exception.index, 2)

    def test_context_broadcast(self):
        ctx = as_context([1.0, 2.0], 4, 2)
        self.assertEqual(ctx.shape, (4, 2))
        self.assertEqual(as_context(None, 3, 0).shape, (3, 0))
        with self.assertRaises(ShapeError):
            as_context(None, 3, 2)


class TestMaskedAffineApply(unittest.TestCase):

    def test_identity_layer(self):
        layer = MaskedLayer(np.eye(3), np.zeros(3), np.ones((3, 3)))
        x = np.array([[0.5, -1.0, 2.0], [3.0, 0.0, 1.0]])
        np.testing.assert_array_equal(masked_affine_apply(layer, x), x)

    def test_zero_mask_outputs_bias(self):
        bias = np.array([1.0, -2.0])
        layer = MaskedLayer(np.ones((2, 3)), bias, np.zeros((2, 3)))
        out = masked_affine_apply(layer, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(out, np.tile(bias, (5, 1)))

    def test_rejects_non_binary_mask(self):
        with self.assertRaises(ValueError):
            MaskedLayer(np.ones((2, 2)), np.zeros(2), np.full((2, 2), 0.5))

    def test_masked_input_does_not_reach_output(self):
        mask = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
        layer = MaskedLayer.initialize(mask, "tanh", RngStream(3))
        x = np.array([[0.1, 0.2, 0.3]])
        x2 = x.copy()
        x2[0, 1] += 5.0
        self.assertEqual(
            masked_affine_apply(layer, x)[0, 0], masked_affine_apply(layer, x2)[0, 0]
        )

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for activation in ("identity", "tanh", "relu"):
            for _ in range(20):
                weight = rng.uniform(-1, 1, size=(3, 2))
                bias = rng.uniform(-1, 1, size=3)
                mask = np.ones((3, 2))
                layer = MaskedLayer(weight, bias, mask, activation)
                x = rng.uniform(-1, 1, size=(4, 2))
                out, cache = layer.forward(x)
                gw, gb, _ = layer.backward(np.ones_like(out), cache)

                def total(params):
                    fresh = MaskedLayer(weight, bias, mask, activation)
                    fresh.set_params(params)
                    return fresh.forward(x)[0].sum()

                numeric = finite_diff_grad(total, layer.get_params())
                np.testing.assert_allclose(
                    flatten_grads([(gw, gb)]), numeric, rtol=1e-5, atol=1e-6
                )

    def test_dict_round_trip(self):
        layer = MaskedLayer.initialize(np.tril(np.ones((3, 3))), "relu", RngStream(2))
        clone = MaskedLayer.from_dict(layer.to_dict())
        np.testing.assert_array_equal(clone.weight, layer.weight)
        np.testing.assert_array_equal(clone.mask, layer.mask)
        self.assertEqual(clone.activation, "relu")


class TestAdamStep(unittest.TestCase):

    def test_zero_gradient_keeps_params(self):
        state = AdamState.fresh(3)
        params = np.array([1.0, -2.0, 0.5])
        new_state, new_params = adam_step(state, params, np.zeros(3))
        np.testing.assert_array_equal(new_params, params)
        self.assertEqual(new_state.step, 1)

    def test_first_step_has_magnitude_lr(self):
        state = AdamState.fresh(1, lr=0.1)
        _, params = adam_step(state, np.array([0.0]), np.array([1.0]))
        self.assertAlmostEqual(params[0], -0.1, places=6)

    def test_repeated_gradient_keeps_direction(self):
        state = AdamState.fresh(1, lr=0.1)
        state, p1 = adam_step(state, np.array([0.0]), np.array([1.0]))
        _, p2 = adam_step(state, p1, np.array([1.0]))
        self.assertLess(p2[0] - p1[0], 0.0)

    def test_deterministic(self):
        state = AdamState.fresh(2)
        a = adam_step(state, np.array([1.0, 2.0]), np.array([0.3, -0.7]))
        b = adam_step(state, np.array([1.0, 2.0]), np.array([0.3, -0.7]))
        np.testing.assert_array_equal(a[1], b[1])

    def test_non_finite_gradient(self):
        with self.assertRaises(NumericError) as ctx:
            adam_step(AdamState.fresh(2), np.zeros(2), np.array([0.0, np.inf]))
        self.assertEqual(ctx.exception.index, 1)

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            adam_step(AdamState.fresh(2), np.zeros(3), np.zeros(3))

    @patch("LFIKit.num_core.config")
    def test_fresh_reads_config_defaults(self, mock_config):
        mock_config.ADAM_LR = 0.5
        mock_config.ADAM_BETA1 = 0.8
        mock_config.ADAM_BETA2 = 0.99
        mock_config.ADAM_EPS = 1e-6
        state = AdamState.fresh(1)
        self.assertEqual((state.lr, state.beta1, state.beta2, state.eps), (0.5, 0.8, 0.99, 1e-6))


class TestFiniteDiffGrad(unittest.TestCase):

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda x: 3.0, [1.0, 2.0]), [0.0, 0.0])

    def test_quadratic(self):
        grad = finite_diff_grad(lambda x: x @ x, [1.0, 2.0])
        np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-8)

    def test_sine(self):
        grad = finite_diff_grad(lambda x: np.sin(x).sum(), np.zeros(3))
        np.testing.assert_allclose(grad, np.ones(3), atol=1e-8)

    def test_rejects_bad_step(self):
        with self.assertRaises(ValueError):
            finite_diff_grad(lambda x: 0.0, [0.0], h=0.0)


class TestRngStream(unittest.TestCase):

    def test_equal_seeds_give_equal_draws(self):
        a, b = RngStream(42, 3), RngStream(42, 3)
        np.testing.assert_array_equal(a.normal(size=10_000), b.normal(size=10_000))

    def test_stream_ids_differ(self):
        a, b = RngStream(42, 0), RngStream(42, 1)
        self.assertFalse(np.array_equal(a.normal(size=10), b.normal(size=10)))

    def test_spawn_is_deterministic(self):
        a = [s.uniform() for s in RngStream(5).spawn(4)]
        b = [s.uniform() for s in RngStream(5).spawn(4)]
        self.assertEqual(a, b)
        self.assertEqual(len(set(a)), 4)


class TestParallelMap(unittest.TestCase):

    def test_keeps_order(self):
        items = list(range(20))
        self.assertEqual(parallel_map(lambda i: i * i, items, threads=4), [i * i for i in items])

    def test_result_independent_of_threads(self):
        def draw(stream):
            return stream.normal()
        serial = parallel_map(draw, RngStream(9).spawn(16), threads=1)
        threaded = parallel_map(draw, RngStream(9).spawn(16), threads=8)
        self.assertEqual(serial, threaded)

    @patch("LFIKit.num_core.config")
    def test_default_threads_from_config(self, mock_config):
        mock_config.THREADS = 1
        self.assertEqual(parallel_map(lambda i: i + 1, [1, 2]), [2, 3])


if __name__ == "__main__":
    unittest.main()
