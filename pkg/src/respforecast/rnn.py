"""Single-hidden-layer recurrent network shared by all online trainers.

The model is
    z_n     = W_a x_n + W_b u_n
    x_{n+1} = tanh(z_n)
    y_{n+1} = W_c x_{n+1}
with instantaneous square loss L = 0.5 * ||y* - y||^2.

The flattened parameter vector follows a fixed column-major layout,
[W_a unrolled, W_b unrolled, W_c unrolled], where unrolling a matrix stacks
its columns end to end.  All gradient plumbing (clipping, SGD updates,
checkpoints) works on that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericError(ArithmeticError):
    """A training run produced a non-finite gradient and must be aborted."""


@dataclass
class RnnModel:
    """Weight matrices and hidden state of the vanilla RNN.

    Shapes: W_a is (q, q), W_b is (q, m+1), W_c is (p, q), x is (q,).
    """

    W_a: np.ndarray
    W_b: np.ndarray
    W_c: np.ndarray
    x: np.ndarray

    @property
    def q(self) -> int:
        return self.W_a.shape[0]

    @property
    def m(self) -> int:
        return self.W_b.shape[1] - 1

    @property
    def p(self) -> int:
        return self.W_c.shape[0]

    @property
    def n_weights(self) -> int:
        return self.W_a.size + self.W_b.size + self.W_c.size

    def copy(self) -> "RnnModel":
        return RnnModel(self.W_a.copy(), self.W_b.copy(), self.W_c.copy(), self.x.copy())


@dataclass(frozen=True)
class StepOutput:
    """Forward-pass products for one time step.

    `e` and `loss` are None when no target was supplied.
    """

    z: np.ndarray
    x_next: np.ndarray
    y: np.ndarray
    e: np.ndarray | None = None
    loss: float | None = None


def init_weights(
    q: int, m: int, p: int, sigma_init: float, rng_seed: int | np.random.Generator
) -> RnnModel:
    """Draws all weights i.i.d. Gaussian(0, sigma_init^2); zero state."""
    if q < 1 or m < 1 or p < 1:
        raise ValueError(f"dimensions must be >= 1, got q={q}, m={m}, p={p}")
    if sigma_init <= 0:
        raise ValueError(f"sigma_init must be positive, got {sigma_init}")
    rng = np.random.default_rng(rng_seed)
    return RnnModel(
        W_a=rng.standard_normal((q, q)) * sigma_init,
        W_b=rng.standard_normal((q, m + 1)) * sigma_init,
        W_c=rng.standard_normal((p, q)) * sigma_init,
        x=np.zeros(q),
    )


def forward_step(model: RnnModel, u: np.ndarray, target: np.ndarray | None = None) -> StepOutput:
    """One forward pass.  Pure: the model's state is not mutated.

    The caller commits `x_next` explicitly once the learning phase is done
    with the pre-step state.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (model.m + 1,):
        raise ValueError(f"input length {u.shape} does not match m+1={model.m + 1}")
    z = model.W_a @ model.x + model.W_b @ u
    x_next = np.tanh(z)
    y = model.W_c @ x_next
    if target is None:
        return StepOutput(z=z, x_next=x_next, y=y)
    e = np.asarray(target, dtype=float) - y
    return StepOutput(z=z, x_next=x_next, y=y, e=e, loss=0.5 * float(e @ e))


def output_layer_gradient(step: StepOutput) -> np.ndarray:
    """dL/dW_c = -e x_next^T, shape (p, q)."""
    return -np.outer(step.e, step.x_next)


def state_loss_gradient(model: RnnModel, e: np.ndarray) -> np.ndarray:
    """dL/dx_next as a column vector: -W_c^T e, shape (q,)."""
    return -(model.W_c.T @ e)


def clip_gradient(g: np.ndarray, tau: float) -> np.ndarray:
    """Rescales g to Euclidean norm tau when it exceeds tau; else unchanged."""
    if tau <= 0:
        raise ValueError(f"clipping threshold must be positive, got {tau}")
    norm = float(np.linalg.norm(g))
    if norm > tau:
        return g * (tau / norm)
    return g


def pack_weights(model: RnnModel) -> np.ndarray:
    """Flattens (W_a, W_b, W_c) into the canonical column-major layout."""
    return np.concatenate(
        [model.W_a.ravel(order="F"), model.W_b.ravel(order="F"), model.W_c.ravel(order="F")]
    )


def unpack_weights(theta: np.ndarray, q: int, m: int, p: int) -> tuple[np.ndarray, ...]:
    """Inverse of `pack_weights`."""
    n_a, n_b, n_c = q * q, q * (m + 1), p * q
    if theta.shape != (n_a + n_b + n_c,):
        raise ValueError(f"flat vector has length {theta.shape}, expected {n_a + n_b + n_c}")
    W_a = theta[:n_a].reshape((q, q), order="F")
    W_b = theta[n_a : n_a + n_b].reshape((q, m + 1), order="F")
    W_c = theta[n_a + n_b :].reshape((p, q), order="F")
    return W_a.copy(), W_b.copy(), W_c.copy()


def pack_gradient(g_ab: np.ndarray, g_c: np.ndarray) -> np.ndarray:
    """Flattens the compact hidden-layer gradient and the output gradient.

    `g_ab` has shape (q, q+m+1); its first q columns address W_a column by
    column and the remaining m+1 columns address W_b.
    """
    return np.concatenate([g_ab.ravel(order="F"), g_c.ravel(order="F")])


def apply_update(model: RnnModel, g: np.ndarray, eta: float) -> RnnModel:
    """SGD step theta' = theta - eta * g on the flat layout, in place.

    Raises:
        NumericError: g contains NaN or infinity; the run must abort.
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient contains non-finite values")
    d_a, d_b, d_c = unpack_weights(g, model.q, model.m, model.p)
    model.W_a -= eta * d_a
    model.W_b -= eta * d_b
    model.W_c -= eta * d_c
    return model


def save_model(model: RnnModel, path) -> None:
    """Checkpoints {q, m, p, theta} for restore during long grid searches."""
    np.savez(path, q=model.q, m=model.m, p=model.p, theta=pack_weights(model))


def load_model(path) -> RnnModel:
    """Restores a checkpoint; the hidden state restarts at zero."""
    with np.load(path) as data:
        q, m, p = int(data["q"]), int(data["m"]), int(data["p"])
        W_a, W_b, W_c = unpack_weights(data["theta"], q, m, p)
    return RnnModel(W_a=W_a, W_b=W_b, W_c=W_c, x=np.zeros(q))
