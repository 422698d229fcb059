import numpy as np
import pytest

from respforecast.rnn import (
    NumericError,
    RnnModel,
    apply_update,
    clip_gradient,
    forward_step,
    init_weights,
    load_model,
    output_layer_gradient,
    pack_gradient,
    pack_weights,
    save_model,
    state_loss_gradient,
    unpack_weights,
)

from oracles import central_difference_gradient


class TestInitWeights:
    def test_sample_std_matches_sigma_init(self):
        # >1e5 pooled draws; sample std within 2% of 0.02
        model = init_weights(q=150, m=600, p=9, sigma_init=0.02, rng_seed=0)
        draws = np.concatenate([model.W_a.ravel(), model.W_b.ravel(), model.W_c.ravel()])
        assert draws.size > 100_000
        assert abs(draws.std() - 0.02) / 0.02 < 0.02
        assert abs(draws.mean()) < 0.001

    def test_same_seed_identical(self):
        a = init_weights(4, 5, 3, 0.02, rng_seed=42)
        b = init_weights(4, 5, 3, 0.02, rng_seed=42)
        np.testing.assert_array_equal(a.W_a, b.W_a)
        np.testing.assert_array_equal(a.W_b, b.W_b)
        np.testing.assert_array_equal(a.W_c, b.W_c)

    def test_state_starts_at_zero(self):
        model = init_weights(6, 3, 2, 0.02, rng_seed=1)
        np.testing.assert_array_equal(model.x, np.zeros(6))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            init_weights(0, 3, 2, 0.02, 0)
        with pytest.raises(ValueError):
            init_weights(3, 3, 2, -0.1, 0)


class TestForwardStep:
    def test_zero_weights(self):
        model = RnnModel(np.zeros((3, 3)), np.zeros((3, 5)), np.zeros((2, 3)), np.zeros(3))
        out = forward_step(model, np.array([1.0, 0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_array_equal(out.x_next, 0.0)
        np.testing.assert_array_equal(out.y, 0.0)

    def test_scalar_hand_evaluation(self):
        model = RnnModel(
            W_a=np.array([[0.5]]),
            W_b=np.array([[0.1, 0.2]]),
            W_c=np.array([[2.0]]),
            x=np.zeros(1),
        )
        out = forward_step(model, np.array([1.0, 0.5]))
        np.testing.assert_allclose(out.z, [0.2])
        np.testing.assert_allclose(out.x_next, [np.tanh(0.2)])
        np.testing.assert_allclose(out.y, [2.0 * np.tanh(0.2)])

    def test_state_bounded_and_not_mutated(self, rng):
        # tanh keeps the state in (-1, 1); float64 saturates to exactly 1.0
        # only when |z| > ~19, so moderate inputs stay strictly inside.
        model = init_weights(5, 4, 3, 1.0, rng_seed=3)
        x_before = model.x.copy()
        u = rng.uniform(-3, 3, 5)
        u[0] = 1.0
        out = forward_step(model, u)
        assert np.abs(out.x_next).max() < 1.0
        np.testing.assert_array_equal(model.x, x_before)

    def test_pure_repeat(self, rng):
        model = init_weights(4, 3, 2, 0.5, rng_seed=9)
        u = rng.standard_normal(4)
        u[0] = 1.0
        t = rng.standard_normal(2)
        a = forward_step(model, u, t)
        b = forward_step(model, u, t)
        np.testing.assert_array_equal(a.y, b.y)
        assert a.loss == b.loss

    def test_loss_definition(self, rng):
        model = init_weights(4, 3, 2, 0.5, rng_seed=9)
        u = rng.standard_normal(4)
        u[0] = 1.0
        target = rng.standard_normal(2)
        out = forward_step(model, u, target)
        assert out.loss == 0.5 * float(out.e @ out.e)
        assert out.loss >= 0
        exact = forward_step(model, u, out.y)
        assert exact.loss == 0.0

    def test_dimension_mismatch(self):
        model = init_weights(3, 4, 2, 0.5, rng_seed=0)
        with pytest.raises(ValueError):
            forward_step(model, np.zeros(3))


class TestGradients:
    def test_output_gradient_zero_error(self, rng):
        model = init_weights(3, 2, 2, 0.5, rng_seed=0)
        u = rng.standard_normal(3)
        out = forward_step(model, u, None)
        perfect = forward_step(model, u, out.y)
        np.testing.assert_array_equal(output_layer_gradient(perfect), 0.0)

    def test_output_gradient_matches_finite_differences(self, rng):
        model = init_weights(3, 2, 2, 0.5, rng_seed=1)
        u = rng.standard_normal(3)
        u[0] = 1.0
        target = rng.standard_normal(2)
        out = forward_step(model, u, target)
        g = output_layer_gradient(out)

        def loss_of_wc(wc_flat):
            W_c = wc_flat.reshape(model.W_c.shape)
            e = target - W_c @ out.x_next
            return 0.5 * float(e @ e)

        fd = central_difference_gradient(loss_of_wc, model.W_c.ravel(), h=1e-6)
        np.testing.assert_allclose(g.ravel(), fd, atol=1e-7)

    def test_output_gradient_scalar_case(self):
        out_like = forward_step(
            RnnModel(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((1, 1)), np.zeros(1)),
            np.array([1.0, 0.0]),
        )
        # e = 2, x_next = 0.5 -> gradient -1.0
        from respforecast.rnn import StepOutput

        step = StepOutput(z=out_like.z, x_next=np.array([0.5]), y=np.zeros(1), e=np.array([2.0]))
        np.testing.assert_allclose(output_layer_gradient(step), [[-1.0]])

    def test_state_gradient_matches_finite_differences(self, rng):
        model = init_weights(4, 2, 3, 0.5, rng_seed=2)
        target = rng.standard_normal(3)
        x_next = rng.uniform(-0.9, 0.9, 4)
        e = target - model.W_c @ x_next

        def loss_of_x(x):
            err = target - model.W_c @ x
            return 0.5 * float(err @ err)

        fd = central_difference_gradient(loss_of_x, x_next, h=1e-6)
        np.testing.assert_allclose(state_loss_gradient(model, e), fd, atol=1e-7)

    def test_state_gradient_identity_output(self):
        model = RnnModel(np.zeros((2, 2)), np.zeros((2, 3)), np.eye(2), np.zeros(2))
        e0 = np.array([0.3, -0.7])
        np.testing.assert_array_equal(state_loss_gradient(model, e0), -e0)


class TestClipGradient:
    def test_below_threshold_unchanged(self):
        g = np.array([30.0, 40.0])
        np.testing.assert_array_equal(clip_gradient(g, 100.0), g)

    def test_rescaled_to_threshold(self):
        np.testing.assert_allclose(clip_gradient(np.array([60.0, 80.0]), 50.0), [30.0, 40.0])

    def test_zero_vector(self):
        np.testing.assert_array_equal(clip_gradient(np.zeros(5), 1.0), np.zeros(5))

    def test_idempotent_and_bounded(self, rng):
        for _ in range(50):
            g = rng.standard_normal(rng.integers(1, 40)) * rng.uniform(0.1, 100)
            tau = rng.uniform(0.1, 10)
            c = clip_gradient(g, tau)
            assert np.linalg.norm(c) <= tau + 1e-12
            np.testing.assert_allclose(clip_gradient(c, tau), c, rtol=1e-15)


class TestWeightLayout:
    def test_pack_unpack_round_trip_random_shapes(self, rng):
        for _ in range(20):
            q = int(rng.integers(1, 7))
            m = int(rng.integers(1, 7))
            p = int(rng.integers(1, 5))
            model = init_weights(q, m, p, 1.0, rng_seed=int(rng.integers(1 << 30)))
            W_a, W_b, W_c = unpack_weights(pack_weights(model), q, m, p)
            np.testing.assert_array_equal(W_a, model.W_a)
            np.testing.assert_array_equal(W_b, model.W_b)
            np.testing.assert_array_equal(W_c, model.W_c)

    def test_pack_gradient_matches_pack_weights_layout(self, rng):
        q, m, p = 3, 4, 2
        model = init_weights(q, m, p, 1.0, rng_seed=0)
        g_ab = rng.standard_normal((q, q + m + 1))
        g_c = rng.standard_normal((p, q))
        flat = pack_gradient(g_ab, g_c)
        W_a, W_b, W_c = unpack_weights(flat, q, m, p)
        np.testing.assert_array_equal(W_a, g_ab[:, :q])
        np.testing.assert_array_equal(W_b, g_ab[:, q:])
        np.testing.assert_array_equal(W_c, g_c)

    def test_apply_update_zero_gradient(self):
        model = init_weights(3, 4, 2, 0.5, rng_seed=5)
        before = pack_weights(model)
        apply_update(model, np.zeros(model.n_weights), eta=0.1)
        np.testing.assert_array_equal(pack_weights(model), before)

    def test_apply_update_single_entry_layout(self):
        # A unit entry addressed at W_a (row 2, column 1) in the column-major
        # layout must move exactly that weight by -eta.
        q, m, p = 4, 3, 2
        model = init_weights(q, m, p, 0.5, rng_seed=6)
        before = model.copy()
        g = np.zeros(model.n_weights)
        i, j = 2, 1
        g[j * q + i] = 1.0
        apply_update(model, g, eta=0.01)
        assert before.W_a[i, j] - model.W_a[i, j] == pytest.approx(0.01)
        model.W_a[i, j] = before.W_a[i, j]
        np.testing.assert_array_equal(model.W_a, before.W_a)
        np.testing.assert_array_equal(model.W_b, before.W_b)
        np.testing.assert_array_equal(model.W_c, before.W_c)

    def test_apply_update_nan_aborts(self):
        model = init_weights(2, 2, 1, 0.5, rng_seed=0)
        g = np.zeros(model.n_weights)
        g[3] = np.nan
        with pytest.raises(NumericError):
            apply_update(model, g, eta=0.1)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path, rng):
        model = init_weights(5, 6, 3, 0.3, rng_seed=11)
        model.x = rng.standard_normal(5)
        path = tmp_path / "model.npz"
        save_model(model, path)
        again = load_model(path)
        np.testing.assert_array_equal(again.W_a, model.W_a)
        np.testing.assert_array_equal(again.W_b, model.W_b)
        np.testing.assert_array_equal(again.W_c, model.W_c)
        np.testing.assert_array_equal(again.x, np.zeros(5))
