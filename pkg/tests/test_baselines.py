import numpy as np
import pytest

from respforecast.baselines import (
    LatestPositionForecaster,
    kkt_violation,
    linreg_fit,
    no_prediction,
    svr_fit,
    svr_predict,
)

from oracles import svr_dual_qp, svr_qp_predict


class TestLinearRegression:
    def test_recovers_known_map(self, rng):
        p, m1 = 3, 8
        W0 = rng.standard_normal((p, m1))
        U = rng.standard_normal((60, m1))
        U[:, 0] = 1.0
        Y = U @ W0.T
        model = linreg_fit(U, Y)
        np.testing.assert_allclose(model.W, W0, atol=1e-8)

    def test_single_example_scalar(self):
        model = linreg_fit(np.array([[1.0]]), np.array([[2.0]]))
        np.testing.assert_allclose(model.W, [[2.0]])

    def test_duplicate_example_invariance(self, rng):
        # Duplicating a zero-residual example re-weights nothing, so the
        # exact-fit solution is unchanged.
        W0 = rng.standard_normal((2, 5))
        U = rng.standard_normal((20, 5))
        Y = U @ W0.T
        base = linreg_fit(U, Y)
        dup = linreg_fit(np.vstack([U, U[3:4]]), np.vstack([Y, Y[3:4]]))
        np.testing.assert_allclose(base.W, dup.W, atol=1e-9)

    def test_residual_orthogonal_to_inputs(self, rng):
        for _ in range(5):
            U = rng.standard_normal((30, 6))
            Y = rng.standard_normal((30, 3))
            model = linreg_fit(U, Y)
            resid = Y - model.predict(U)
            assert np.abs(U.T @ resid).max() < 1e-8

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            linreg_fit(np.empty((0, 3)), np.empty((0, 2)))


def toy_regression_set(rng, n=5, dim=1):
    X = np.linspace(-1.0, 1.0, n)[:, None] * np.ones((1, dim))
    y = np.sin(2.0 * X[:, 0]) + 0.1 * rng.standard_normal(n)
    return X, y


class TestSvr:
    def test_constant_targets_absorbed_by_bias(self, rng):
        U = rng.standard_normal((12, 4))
        Y = np.full((12, 2), 3.7)
        model = svr_fit(U, Y, sigma=1.0, epsilon=0.05, C=10.0)
        preds = model.predict(U)
        np.testing.assert_allclose(preds, 3.7, atol=1e-9)
        for i in range(2):
            assert model.alphas(i).size == 0 or np.abs(model.alphas(i)).max() < 1e-12

    def test_matches_dense_qp_oracle(self, rng):
        X, y = toy_regression_set(rng)
        sigma, eps, C = 0.7, 0.05, 5.0
        model = svr_fit(X, y[:, None], sigma=sigma, epsilon=eps, C=C, tol=1e-6)
        beta, b = svr_dual_qp(X, y, sigma, eps, C)
        query = np.linspace(-1.2, 1.2, 9)[:, None]
        got = model.predict(query)[:, 0]
        want = svr_qp_predict(X, beta, b, sigma, query)
        np.testing.assert_allclose(got, want, atol=1e-3)

    def test_box_constraint_on_duals(self, rng):
        X, y = toy_regression_set(rng, n=12)
        C = 2.0
        model = svr_fit(X, y[:, None], sigma=0.5, epsilon=0.01, C=C)
        assert np.abs(model.alphas(0)).max() <= C * (1 + 1e-9)

    def test_points_inside_tube_are_non_support(self, rng):
        X, y = toy_regression_set(rng, n=20)
        eps = 0.2
        model = svr_fit(X, y[:, None], sigma=0.7, epsilon=eps, C=5.0, tol=1e-6)
        resid = y - model.predict(X)[:, 0]
        alpha = np.zeros(len(X))
        alpha[model._estimators[0].support_] = model.alphas(0)
        inside = np.abs(resid) < eps - 1e-3
        assert inside.any()
        np.testing.assert_allclose(alpha[inside], 0.0, atol=1e-12)

    def test_interior_points_predicted_within_tube(self, rng):
        X, y = toy_regression_set(rng, n=20)
        eps = 0.1
        model = svr_fit(X, y[:, None], sigma=0.7, epsilon=eps, C=50.0, tol=1e-6)
        resid = y - model.predict(X)[:, 0]
        alpha = np.zeros(len(X))
        alpha[model._estimators[0].support_] = model.alphas(0)
        free_or_inside = np.abs(alpha) < 50.0 * (1 - 1e-9)
        assert np.abs(resid[free_or_inside]).max() <= eps + 1e-3

    def test_far_query_returns_bias(self, rng):
        X, y = toy_regression_set(rng)
        model = svr_fit(X, y[:, None], sigma=0.3, epsilon=0.05, C=5.0)
        far = svr_predict(model, np.array([50.0]))
        np.testing.assert_allclose(far, [model.intercept(0)], atol=1e-9)

    def test_kkt_violation_small_after_fit(self, rng):
        X, y = toy_regression_set(rng, n=25)
        Y = np.column_stack([y, -2.0 * y])
        model = svr_fit(X, Y, sigma=0.7, epsilon=0.05, C=5.0, tol=1e-4)
        assert kkt_violation(model, X, Y) < 1e-3

    def test_invalid_hyperparameters(self, rng):
        X, y = toy_regression_set(rng)
        with pytest.raises(ValueError):
            svr_fit(X, y[:, None], sigma=-1.0, epsilon=0.05, C=5.0)


class TestNoPrediction:
    def test_returns_trailing_block(self, rng):
        u = np.concatenate([[1.0], rng.standard_normal(12)])
        np.testing.assert_array_equal(no_prediction(u, 3), u[-3:])

    def test_constant_signal_zero_error_any_horizon(self):
        width = 6
        u = np.concatenate([[1.0], np.tile([2.0, -1.0, 0.5, 3.0, 4.0, 5.0], 4)])
        pred = no_prediction(u, width)
        np.testing.assert_array_equal(pred, [2.0, -1.0, 0.5, 3.0, 4.0, 5.0])

    def test_sinusoid_rmse_closed_form(self):
        # Lagged sinusoid error: RMS of A sin(wt) - A sin(wt - delta) over
        # whole periods is A * sqrt(2) * |sin(delta / 2)|.  The enumeration
        # over the sampled grid is the oracle; the closed form cross-checks.
        A, samples_per_period, periods = 4.0, 40, 25
        h = 3  # horizon in steps
        n = samples_per_period * periods
        t = np.arange(n + h)
        x = A * np.sin(2 * np.pi * t / samples_per_period)
        pred = x[:n]  # exactly whole periods of the lagged pair
        truth = x[h : n + h]
        rmse_enumerated = np.sqrt(np.mean((pred - truth) ** 2))
        delta = 2 * np.pi * h / samples_per_period
        closed_form = A * np.sqrt(2.0) * abs(np.sin(delta / 2.0))
        np.testing.assert_allclose(rmse_enumerated, closed_form, rtol=1e-9)

    def test_forecaster_interface(self, rng):
        fc = LatestPositionForecaster(output_dim=3)
        u = np.concatenate([[1.0], rng.standard_normal(9)])
        np.testing.assert_array_equal(fc.step(u, rng.standard_normal(3)), u[-3:])

    def test_window_too_narrow(self):
        with pytest.raises(ValueError):
            no_prediction(np.array([1.0, 2.0]), 3)
