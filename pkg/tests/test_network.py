import numpy as np
import pytest

from vlcloc.network import (LossWeights, Mlp, ModelConfig, OptimizerState,
                            adam_step, backward, combined_loss, forward,
                            init_model, mse_loss, optimizer_step, sgd_step)


def tiny_model(sizes=(3, 4, 2), activation="tanh", seed=0) -> Mlp:
    return init_model(ModelConfig(sizes[0], tuple(sizes[1:-1]), sizes[-1],
                                  activation, seed))


class TestInitModel:
    def test_default_profile_shapes(self):
        mlp = init_model(ModelConfig())
        expected = [(10, 512), (512, 256), (256, 128), (128, 64), (64, 32), (32, 2)]
        assert [w.shape for w in mlp.weights] == expected
        assert [b.shape for b in mlp.biases] == [(s[1],) for s in expected]

    def test_default_profile_parameter_count(self):
        sizes = (10, 512, 256, 128, 64, 32, 2)
        expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        assert expected == 180_258
        assert init_model(ModelConfig()).n_params() == expected

    def test_same_seed_bit_identical(self):
        a, b = init_model(ModelConfig(init_seed=4)), init_model(ModelConfig(init_seed=4))
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_different_seeds_differ(self):
        a, b = init_model(ModelConfig(init_seed=4)), init_model(ModelConfig(init_seed=5))
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_biases_zero_at_init(self):
        assert all(np.all(b == 0.0) for b in init_model(ModelConfig()).biases)

    def test_weight_bound_scales_with_fan_in(self):
        mlp = init_model(ModelConfig())
        for w in mlp.weights:
            bound = np.sqrt(6.0 / w.shape[0])
            assert np.abs(w).max() <= bound

    def test_invalid_layer_size_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden_sizes=(16, 0))

    def test_invalid_activation_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(activation="sigmoid")


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        mlp = Mlp([np.zeros((3, 4)), np.zeros((4, 2))],
                   [np.zeros(4), np.zeros(2)], "relu")
        assert np.array_equal(forward(mlp, np.ones(3)), np.zeros(2))

    def test_relu_gates_negative_preactivation(self):
        # single hidden unit driven negative: output reduces to output bias
        mlp = Mlp([np.array([[1.0]]), np.array([[3.0]])],
                   [np.zeros(1), np.array([0.25])], "relu")
        assert forward(mlp, np.array([-1.0])) == pytest.approx([0.25])

    def test_batch_equals_stacked_singles(self):
        mlp = tiny_model((5, 8, 8, 2), "relu", seed=1)
        x = np.random.default_rng(2).normal(size=(6, 5))
        batch = forward(mlp, x)
        singles = np.stack([forward(mlp, row) for row in x])
        assert np.allclose(batch, singles, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward(tiny_model(), np.ones(7))


class TestLosses:
    def test_perfect_prediction_is_zero(self):
        y = np.ones((4, 2))
        assert mse_loss(y, y) == 0.0

    def test_hand_computed_value(self):
        assert mse_loss(np.array([[1.0, 2.0]]), np.zeros((1, 2))) == pytest.approx(2.5)

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(0)
        pred, target = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        base = mse_loss(pred, target)
        scaled = mse_loss(target + 3.0 * (pred - target), target)
        assert scaled == pytest.approx(9.0 * base)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            mse_loss(np.empty((0, 2)), np.empty((0, 2)))

    def test_combined_loss_target_only_default(self):
        assert combined_loss(123.0, 0.7, LossWeights()) == pytest.approx(0.7)

    def test_combined_loss_weighted_sum(self):
        assert combined_loss(2.0, 4.0, LossWeights(0.5, 0.5)) == pytest.approx(3.0)

    def test_combined_loss_source_passthrough(self):
        assert combined_loss(2.0, 4.0, LossWeights(1.0, 0.0)) == pytest.approx(2.0)

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)


def finite_difference_grads(mlp: Mlp, x, y, step=1e-5):
    w_grads = [np.zeros_like(w) for w in mlp.weights]
    b_grads = [np.zeros_like(b) for b in mlp.biases]
    for l in range(mlp.n_layers):
        for arr, grad in ((mlp.weights[l], w_grads[l]), (mlp.biases[l], b_grads[l])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                up = mse_loss(forward(mlp, x), y)
                arr[idx] = orig - step
                down = mse_loss(forward(mlp, x), y)
                arr[idx] = orig
                grad[idx] = (up - down) / (2.0 * step)
    return w_grads, b_grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


class TestBackward:
    def test_matches_finite_differences_tanh(self):
        mlp = tiny_model((10, 8, 8, 2), "tanh", seed=3)
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=(16, 10)), rng.normal(size=(16, 2))
        aw, ab = backward(mlp, x, y)
        nw, nb = finite_difference_grads(mlp, x, y)
        assert max_relative_error(aw, nw) <= 1e-4
        assert max_relative_error(ab, nb) <= 1e-4

    def test_matches_finite_differences_relu(self):
        mlp = tiny_model((6, 8, 2), "relu", seed=5)
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=(8, 6)), rng.normal(size=(8, 2))
        # keep away from the relu kink so central differences are valid
        pre = x @ mlp.weights[0] + mlp.biases[0]
        assert np.min(np.abs(pre)) > 1e-6
        aw, ab = backward(mlp, x, y)
        nw, nb = finite_difference_grads(mlp, x, y)
        assert max_relative_error(aw, nw) <= 1e-4
        assert max_relative_error(ab, nb) <= 1e-4

    def test_zero_gradient_at_exact_fit(self):
        # linear data fitted exactly by a linear (no-hidden-layer) model
        w = np.array([[1.0, -2.0], [0.5, 0.0], [0.0, 3.0]])
        b = np.array([0.1, -0.4])
        mlp = Mlp([w.copy()], [b.copy()], "relu")
        x = np.random.default_rng(7).normal(size=(32, 3))
        y = x @ w + b
        w_grads, b_grads = backward(mlp, x, y)
        assert np.linalg.norm(w_grads[0]) < 1e-10
        assert np.linalg.norm(b_grads[0]) < 1e-10

    def test_batch_order_invariance(self):
        mlp = tiny_model((4, 6, 2), "tanh", seed=8)
        rng = np.random.default_rng(9)
        x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 2))
        perm = rng.permutation(10)
        a = backward(mlp, x, y)
        b = backward(mlp, x[perm], y[perm])
        for ga, gb in zip(a[0] + a[1], b[0] + b[1]):
            assert np.allclose(ga, gb, atol=1e-12)

    def test_label_shape_mismatch_rejected(self):
        mlp = tiny_model((4, 6, 2), "tanh")
        with pytest.raises(ValueError):
            backward(mlp, np.ones((5, 4)), np.ones((5, 3)))


class TestSgdStep:
    def test_hand_computed_update(self):
        mlp = Mlp([np.array([[1.0]])], [np.array([0.0])], "relu")
        state = OptimizerState("sgd", learning_rate=0.1)
        out = sgd_step(mlp, ([np.array([[0.5]])], [np.array([0.0])]), state)
        assert out.weights[0][0, 0] == pytest.approx(0.95)

    def test_zero_gradient_is_identity(self):
        mlp = tiny_model()
        state = OptimizerState("sgd", 0.1)
        grads = ([np.zeros_like(w) for w in mlp.weights],
                 [np.zeros_like(b) for b in mlp.biases])
        out = sgd_step(mlp, grads, state)
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, mlp.weights))

    def test_two_steps_equal_one_double_step(self):
        mlp = tiny_model()
        grads = ([np.ones_like(w) for w in mlp.weights],
                 [np.ones_like(b) for b in mlp.biases])
        twice = sgd_step(sgd_step(mlp, grads, OptimizerState("sgd", 0.1)),
                         grads, OptimizerState("sgd", 0.1))
        once = sgd_step(mlp, grads, OptimizerState("sgd", 0.2))
        for a, b in zip(twice.weights, once.weights):
            assert np.allclose(a, b, atol=1e-12)

    def test_frozen_layers_shared_by_reference(self):
        mlp = tiny_model((3, 4, 4, 2))
        grads = ([np.ones_like(w) for w in mlp.weights],
                 [np.ones_like(b) for b in mlp.biases])
        out = sgd_step(mlp, grads, OptimizerState("sgd", 0.1), frozen=[True, False, True])
        assert out.weights[0] is mlp.weights[0]
        assert out.weights[2] is mlp.weights[2]
        assert not np.array_equal(out.weights[1], mlp.weights[1])


class TestAdamStep:
    def test_bias_corrected_first_step(self):
        mlp = Mlp([np.array([[0.0]])], [np.array([0.0])], "relu")
        state = OptimizerState("adam", learning_rate=1e-3)
        out = adam_step(mlp, ([np.array([[0.5]])], [np.array([0.0])]), state)
        assert out.weights[0][0, 0] == pytest.approx(-1e-3, rel=1e-4)

    def test_zero_gradient_first_step_no_change(self):
        mlp = tiny_model()
        grads = ([np.zeros_like(w) for w in mlp.weights],
                 [np.zeros_like(b) for b in mlp.biases])
        out = adam_step(mlp, grads, OptimizerState("adam", 1e-3))
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, mlp.weights))

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_first_step_magnitude_bounded_by_learning_rate(self, scale):
        mlp = Mlp([np.zeros((2, 2))], [np.zeros(2)], "relu")
        state = OptimizerState("adam", learning_rate=1e-3)
        grads = ([np.full((2, 2), scale)], [np.full(2, scale)])
        out = adam_step(mlp, grads, state)
        assert np.all(np.abs(out.weights[0]) <= 1e-3 * (1.0 + 1e-6))
        assert np.all(np.abs(out.weights[0]) >= 1e-3 * 0.9)

    def test_frozen_layer_moments_stay_zero(self):
        mlp = tiny_model((3, 4, 2))
        state = OptimizerState("adam", 1e-3)
        grads = ([np.ones_like(w) for w in mlp.weights],
                 [np.ones_like(b) for b in mlp.biases])
        for _ in range(3):
            mlp = adam_step(mlp, grads, state, frozen=[True, False])
        assert np.all(state.m_w[0] == 0.0) and np.all(state.v_w[0] == 0.0)
        assert np.any(state.m_w[1] != 0.0)

    def test_sgd_state_rejected(self):
        mlp = tiny_model()
        with pytest.raises(ValueError):
            adam_step(mlp, ([np.zeros_like(w) for w in mlp.weights],
                            [np.zeros_like(b) for b in mlp.biases]),
                      OptimizerState("sgd", 0.1))

    def test_dispatch_by_kind(self):
        mlp = Mlp([np.array([[1.0]])], [np.array([0.0])], "relu")
        grads = ([np.array([[0.5]])], [np.array([0.0])])
        sgd = optimizer_step(mlp, grads, OptimizerState("sgd", 0.1))
        adam = optimizer_step(mlp, grads, OptimizerState("adam", 0.1))
        assert sgd.weights[0][0, 0] == pytest.approx(0.95)
        assert adam.weights[0][0, 0] == pytest.approx(0.9, rel=1e-4)


class TestOptimizerStateValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            OptimizerState("rmsprop", 0.1)

    def test_non_positive_learning_rate_rejected(self):
        with pytest.raises(ValueError):
            OptimizerState("sgd", 0.0)
