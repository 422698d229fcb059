"""Batch-fit baselines: multivariate linear regression, RBF-kernel support
vector regression, and the no-prediction reference.

Offline models are fit once on the training window and never updated
afterwards, including while the test interval streams past them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVR


class SvrConvergenceError(RuntimeError):
    """The SVR dual solver hit its iteration cap before converging."""

    def __init__(self, message: str, kkt_residual: float):
        super().__init__(message)
        self.kkt_residual = kkt_residual


@dataclass
class LinRegModel:
    """Least-squares linear map y = W u, W of shape (p, m+1)."""

    W: np.ndarray

    def predict(self, U: np.ndarray) -> np.ndarray:
        return np.atleast_2d(U) @ self.W.T


def linreg_fit(U: np.ndarray, Y: np.ndarray) -> LinRegModel:
    """Fits W minimizing sum ||y - W u||^2 (minimum-norm when underdetermined)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(U) == 0:
        raise ValueError("cannot fit linear regression on an empty training set")
    if len(U) != len(Y):
        raise ValueError(f"inputs ({len(U)}) and targets ({len(Y)}) disagree in length")
    coef, *_ = np.linalg.lstsq(U, Y, rcond=None)
    return LinRegModel(W=coef.T)


class SvrModel:
    """Per-output epsilon-insensitive SVR models sharing one RBF kernel.

    Each of the p outputs gets its own scalar model
    y_i = sum_k alpha_{k,i} K(x_k, x) + beta_i with the shared
    hyperparameters (sigma, epsilon, C); K(x, x') = exp(-||x-x'||^2 / (2 sigma^2)).
    """

    def __init__(self, sigma: float, epsilon: float, C: float, estimators: list[SVR]):
        self.sigma = sigma
        self.epsilon = epsilon
        self.C = C
        self._estimators = estimators

    @property
    def n_outputs(self) -> int:
        return len(self._estimators)

    def alphas(self, i: int) -> np.ndarray:
        """Signed dual coefficients of output i (|alpha| <= C)."""
        return self._estimators[i].dual_coef_.ravel()

    def support_vectors(self, i: int) -> np.ndarray:
        return self._estimators[i].support_vectors_

    def intercept(self, i: int) -> float:
        return float(self._estimators[i].intercept_[0])

    def predict(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        return np.column_stack([est.predict(U) for est in self._estimators])


def svr_fit(
    U: np.ndarray,
    Y: np.ndarray,
    sigma: float,
    epsilon: float,
    C: float,
    tol: float = 1e-3,
    max_iter_per_example: int = 100_000,
) -> SvrModel:
    """Fits the p independent scalar SVR duals.

    Raises:
        SvrConvergenceError: the solver exhausted its iteration cap; the
            error carries the worst KKT residual of the partial solution.
    """
    if sigma <= 0 or epsilon <= 0 or C <= 0:
        raise ValueError("sigma, epsilon and C must all be positive")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(U) == 0:
        raise ValueError("cannot fit SVR on an empty training set")
    gamma = 1.0 / (2.0 * sigma**2)
    max_iter = max_iter_per_example * len(U)
    estimators = []
    for i in range(Y.shape[1]):
        est = SVR(kernel="rbf", gamma=gamma, epsilon=epsilon, C=C, tol=tol, max_iter=max_iter)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            est.fit(U, Y[:, i])
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            partial = SvrModel(sigma, epsilon, C, estimators + [est])
            residual = kkt_violation(partial, U, Y[:, : len(estimators) + 1])
            raise SvrConvergenceError(
                f"SVR output {i} did not converge within {max_iter} iterations "
                f"(worst KKT residual {residual:.3e})",
                kkt_residual=residual,
            )
        estimators.append(est)
    return SvrModel(sigma, epsilon, C, estimators)


def svr_predict(model: SvrModel, u: np.ndarray) -> np.ndarray:
    """Kernel expansion per output for a single input."""
    return model.predict(np.atleast_2d(u))[0]


def kkt_violation(model: SvrModel, U: np.ndarray, Y: np.ndarray) -> float:
    """Worst complementary-slackness violation over all outputs and examples.

    For residual r = y - f(x): interior points (alpha = 0) must satisfy
    |r| <= eps, bounded ones (|alpha| = C) must have |r| >= eps pushing in the
    direction of sign(alpha), and free ones must sit on the tube boundary.
    """
    U = np.atleast_2d(U)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    eps, C = model.epsilon, model.C
    preds = model.predict(U)
    worst = 0.0
    for i in range(Y.shape[1]):
        resid = Y[:, i] - preds[:, i]
        alpha = np.zeros(len(U))
        alpha[model._estimators[i].support_] = model.alphas(i)
        interior = np.abs(alpha) < 1e-12
        bounded = np.abs(np.abs(alpha) - C) < 1e-9 * C
        free = ~interior & ~bounded
        if interior.any():
            worst = max(worst, float((np.abs(resid[interior]) - eps).max(initial=0.0)))
        if bounded.any():
            v = (eps - np.sign(alpha[bounded]) * resid[bounded]).max(initial=0.0)
            worst = max(worst, float(v))
        if free.any():
            v = np.abs(resid[free] - eps * np.sign(alpha[free])).max(initial=0.0)
            worst = max(worst, float(v))
    return worst


def no_prediction(u: np.ndarray, output_dim: int) -> np.ndarray:
    """Returns the most recent observed positions in the input window.

    The input layout ends with the newest time step, so the forecast for any
    horizon is simply its trailing block.
    """
    u = np.asarray(u)
    if len(u) < 1 + output_dim:
        raise ValueError(f"input of length {len(u)} cannot hold {output_dim} coordinates")
    return u[-output_dim:].copy()


class LatestPositionForecaster:
    """Online-interface wrapper for the no-prediction baseline (no learning)."""

    def __init__(self, output_dim: int):
        self.output_dim = output_dim

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        return no_prediction(u, self.output_dim)
