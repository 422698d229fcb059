"""One-step-per-sample online learners sharing the vanilla RNN model.

Every trainer follows the same protocol: `step(u, target)` first makes the
prediction with the current weights, then uses the revealed target to update
them, commits the new hidden state, and returns the prediction.  The
prediction therefore never sees its own target.

Hidden-layer gradients live in a "compact" (q, q+m+1) layout whose first q
columns address W_a column by column and whose remaining m+1 columns address
W_b; flattening it column-major yields the canonical layout of
`rnn.pack_gradient`.  The full gradient (hidden + output blocks) is clipped
as one vector before the SGD step.

The step loops are allocation-free where it matters: rank-one updates go
through BLAS `dger` on transposed views (in place for C-contiguous weights)
and recurring intermediates live in per-trainer buffers.  Set
``record_gradients=True`` to additionally materialize the committed
(post-clip) gradient blocks in `last_g_ab` / `last_g_c` for inspection.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import blas

from .rnn import (
    NumericError,
    RnnModel,
    forward_step,
    output_layer_gradient,
    state_loss_gradient,
)

#: Stabilizer added to the norms in UORO's variance-minimizing ratios.
UORO_EPSILON = 1e-7


def _rank_one_update(W: np.ndarray, alpha: float, col: np.ndarray, row: np.ndarray) -> None:
    """W += alpha * outer(col, row), in place.

    BLAS ger wants column-major storage, so the update is applied to the
    transposed view of the C-contiguous weight matrix.
    """
    blas.dger(alpha, row, col, a=W.T, overwrite_a=1)


def _add_scaled(dst: np.ndarray, src: np.ndarray, alpha: float) -> None:
    """dst += alpha * src for same-shape C-contiguous arrays, in place."""
    blas.daxpy(src.ravel(), dst.ravel(), a=alpha)


class _GradientTrainer:
    """Shared plumbing: clip bookkeeping and the output-layer update."""

    def __init__(self, model: RnnModel, eta: float, tau: float, record_gradients: bool = False):
        if eta < 0:
            raise ValueError(f"learning rate must be >= 0, got {eta}")
        if tau <= 0:
            raise ValueError(f"clipping threshold must be positive, got {tau}")
        self.model = model
        self.eta = eta
        self.tau = tau
        self.record_gradients = record_gradients
        self.last_update_norm: float | None = None
        self.last_g_ab: np.ndarray | None = None
        self.last_g_c: np.ndarray | None = None
        self._xu = np.empty(model.q + model.m + 1)

    def _fill_xu(self, u: np.ndarray) -> np.ndarray:
        q = self.model.q
        self._xu[:q] = self.model.x
        self._xu[q:] = u
        return self._xu

    def _clip_scale(self, gnorm_sq: float) -> float:
        """Registers the committed norm; returns the clipping factor."""
        gnorm = float(np.sqrt(gnorm_sq))
        if not np.isfinite(gnorm):
            raise NumericError(f"{type(self).__name__}: non-finite gradient")
        if gnorm > self.tau:
            self.last_update_norm = self.tau
            return self.tau / gnorm
        self.last_update_norm = gnorm
        return 1.0


class RtrlTrainer(_GradientTrainer):
    """Real-time recurrent learning: exact recursive influence propagation.

    Tracks the influence matrix dx_n/dtheta restricted to the (W_a, W_b)
    block -- the W_c block of the immediate Jacobian is identically zero, so
    the output-layer gradient comes directly from the forward pass.  Each
    step propagates

        influence' = D_n @ influence + immediate_jacobian

    with D_n the full state-to-state Jacobian diag(tanh'(z_n)) W_a, then
    projects the loss signal through it:

        g_ab = (dL/dx_next) @ influence'

    Cost per step is O(q^2 (q + m)), which is what makes RTRL the slow
    reference the cheaper approximations are measured against.
    """

    def __init__(self, model, eta, tau, record_gradients=False):
        super().__init__(model, eta, tau, record_gradients)
        q, m = model.q, model.m
        self.influence = np.zeros((q, q * (q + m + 1)))
        self._next = np.empty_like(self.influence)
        self._imm = np.empty((q, q + m + 1))
        self._diag = np.arange(q)

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        model = self.model
        q, m = model.q, model.m
        out = forward_step(model, u, target)
        grad_x = state_loss_gradient(model, out.e)
        phi_p = 1.0 - out.x_next**2
        xu = self._fill_xu(u)
        np.multiply.outer(phi_p, xu, out=self._imm)
        dyn = phi_p[:, None] * model.W_a
        np.matmul(dyn, self.influence, out=self._next)
        self.influence, self._next = self._next, self.influence
        # The immediate Jacobian has one nonzero per column, at row i for the
        # column addressing W_a[i, j] or W_b[i, j]; scatter-add those entries.
        view3 = self.influence.reshape(q, q + m + 1, q)
        view3[self._diag, :, self._diag] += self._imm

        g_flat = grad_x @ self.influence
        g_c = output_layer_gradient(out)
        scale = self._clip_scale(float(np.vdot(g_flat, g_flat) + np.vdot(g_c, g_c)))
        g_ab = g_flat.reshape(q, q + m + 1, order="F")
        if self.record_gradients:
            self.last_g_ab, self.last_g_c = g_ab * scale, g_c * scale
        step_scale = self.eta * scale
        model.W_a -= step_scale * g_ab[:, :q]
        model.W_b -= step_scale * g_ab[:, q:]
        model.W_c -= step_scale * g_c
        model.x = out.x_next
        return out.y


class UoroState:
    """Rank-one influence estimate: E(outer(x_tilde, theta_tilde)) tracks the
    true influence matrix over the (W_a, W_b) block."""

    def __init__(self, q: int, m: int):
        self.x_tilde = np.zeros(q)
        self._theta_a = np.zeros((q, q))
        self._theta_b = np.zeros((q, m + 1))

    @property
    def theta_tilde(self) -> np.ndarray:
        """Flat view of the parameter-like factor in the canonical layout."""
        return np.concatenate(
            [self._theta_a.ravel(order="F"), self._theta_b.ravel(order="F")]
        )

    def theta_norm(self) -> float:
        return float(
            np.sqrt(np.vdot(self._theta_a, self._theta_a) + np.vdot(self._theta_b, self._theta_b))
        )


class UoroTrainer(_GradientTrainer):
    """Unbiased online recurrent optimization.

    The influence matrix is estimated by a rank-one product of a state-like
    vector x_tilde (q,) and a parameter-like vector theta_tilde (flat over
    the W_a/W_b block), refreshed each step with a random sign vector nu:

        x_tilde'     = rho0 * D_n x_tilde + rho1 * nu
        theta_tilde' = theta_tilde / rho0 + (nu^T dF/dtheta) / rho1

    The norm ratios rho0 = sqrt((|theta_tilde| + eps) / (|D x_tilde| + eps))
    and rho1 = sqrt((|nu^T dF/dtheta| + eps) / (|nu| + eps)) minimize the
    estimator variance; the eps stabilizer guards the vanishing-norm corner
    cases.  Cross terms are odd in nu, so unbiasedness holds for any rho.

    The hidden-layer gradient is the scalar projection (dL/dx . x_tilde')
    times theta_tilde', applied to the weights without ever materializing
    the full gradient: nu^T dF/dtheta is itself the rank-one matrix
    outer(nu * tanh'(z), [x, u]).
    """

    def __init__(
        self,
        model: RnnModel,
        eta: float,
        tau: float,
        rng: int | np.random.Generator = 0,
        epsilon_stab: float = UORO_EPSILON,
        record_gradients: bool = False,
    ):
        super().__init__(model, eta, tau, record_gradients)
        self.rng = np.random.default_rng(rng)
        self.epsilon_stab = epsilon_stab
        self.state = UoroState(model.q, model.m)

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        model = self.model
        q = model.q
        out = forward_step(model, u, target)
        grad_x = state_loss_gradient(model, out.e)
        phi_p = 1.0 - out.x_next**2
        eps = self.epsilon_stab
        st = self.state
        xu = self._fill_xu(u)

        nu = self.rng.choice([-1.0, 1.0], size=q)
        w = nu * phi_p
        # ||outer(w, xu)|| factorizes, so the projection norm needs no matrix.
        proj_norm = float(np.linalg.norm(w) * np.linalg.norm(xu))
        forwarded = phi_p * (model.W_a @ st.x_tilde)
        rho0 = np.sqrt((st.theta_norm() + eps) / (np.linalg.norm(forwarded) + eps))
        rho1 = np.sqrt((proj_norm + eps) / (np.sqrt(q) + eps))
        st.x_tilde = rho0 * forwarded + rho1 * nu
        inv0, inv1 = 1.0 / rho0, 1.0 / rho1
        np.multiply(st._theta_a, inv0, out=st._theta_a)
        np.multiply(st._theta_b, inv0, out=st._theta_b)
        _rank_one_update(st._theta_a, inv1, w, xu[:q])
        _rank_one_update(st._theta_b, inv1, w, xu[q:])

        signal = float(grad_x @ st.x_tilde)
        g_c = output_layer_gradient(out)
        theta_norm = st.theta_norm()
        scale = self._clip_scale(signal**2 * theta_norm**2 + float(np.vdot(g_c, g_c)))
        if self.record_gradients:
            coeff = signal * scale
            self.last_g_ab = np.hstack([coeff * st._theta_a, coeff * st._theta_b])
            self.last_g_c = g_c * scale
        alpha = -self.eta * scale * signal
        _add_scaled(model.W_a, st._theta_a, alpha)
        _add_scaled(model.W_b, st._theta_b, alpha)
        model.W_c -= (self.eta * scale) * g_c
        model.x = out.x_next
        return out.y


class Snap1Trainer(_GradientTrainer):
    """Sparse one-step approximation with compressed influence matrix.

    The state-to-state Jacobian is approximated by its diagonal
    dbar_i = tanh'(z_n)_i * W_a[i, i].  Under that approximation the
    influence matrix keeps one nonzero per column forever, so it is stored
    compressed as J of shape (q, m+q+1) and updated as

        J' = dbar[:, None] * J + outer(tanh'(z_n), [x, u])

    The hidden-layer gradient is the column-broadcast elementwise product
    of dL/dx_next with J'.  Cost per step is O(q (m + q)).
    """

    def __init__(self, model, eta, tau, record_gradients=False):
        super().__init__(model, eta, tau, record_gradients)
        self.J = np.zeros((model.q, model.q + model.m + 1))
        self._gbuf = np.empty_like(self.J)

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        model = self.model
        q = model.q
        out = forward_step(model, u, target)
        grad_x = state_loss_gradient(model, out.e)
        phi_p = 1.0 - out.x_next**2
        xu = self._fill_xu(u)

        dbar = phi_p * np.diag(model.W_a)
        np.multiply(self.J, dbar[:, None], out=self.J)
        _rank_one_update(self.J, 1.0, phi_p, xu)

        g_ab = np.multiply(grad_x[:, None], self.J, out=self._gbuf)
        g_c = output_layer_gradient(out)
        scale = self._clip_scale(float(np.vdot(g_ab, g_ab) + np.vdot(g_c, g_c)))
        if self.record_gradients:
            self.last_g_ab, self.last_g_c = g_ab * scale, g_c * scale
        step_scale = self.eta * scale
        np.multiply(g_ab, step_scale, out=g_ab)
        model.W_a -= g_ab[:, :q]
        model.W_b -= g_ab[:, q:]
        model.W_c -= step_scale * g_c
        model.x = out.x_next
        return out.y


def dni_residual(
    A: np.ndarray,
    x_tilde: np.ndarray,
    x_tilde_next: np.ndarray,
    grad_x: np.ndarray,
    dyn: np.ndarray,
) -> np.ndarray:
    """Bootstrap residual f(A) whose squared norm the coefficient fit minimizes.

    f(A) = x_tilde A - grad_x^T - (x_tilde_next A) D.  The bracketed product
    must be evaluated first to keep the step at O(q^2).
    """
    return x_tilde @ A - grad_x - (x_tilde_next @ A) @ dyn


def dni_coefficient_gradient(
    A: np.ndarray,
    x_tilde: np.ndarray,
    x_tilde_next: np.ndarray,
    grad_x: np.ndarray,
    dyn: np.ndarray,
    full_update: bool = True,
) -> np.ndarray:
    """Gradient of 0.5 * ||f(A)||^2 with respect to A.

    The full rule is outer(x_tilde, f) - outer(x_tilde_next, f D^T); the
    simplified rule drops the second term, which is exact only when the
    dynamic matrix vanishes.
    """
    f = dni_residual(A, x_tilde, x_tilde_next, grad_x, dyn)
    delta = np.outer(x_tilde, f)
    if full_update:
        delta -= np.outer(x_tilde_next, f @ dyn.T)
    return delta


class DniState:
    """Credit-assignment regression state for DNI."""

    def __init__(self, q: int, p: int, rng: np.random.Generator):
        self.A = rng.standard_normal((p + q + 1, q)) / np.sqrt(q)
        self.x_tilde = np.zeros(p + q + 1)
        self.x_tilde[-1] = 1.0


class DniTrainer(_GradientTrainer):
    """Decoupled neural interfaces: linear synthetic-gradient bootstrap.

    A coefficient matrix A of shape (p+q+1, q) linearly predicts the credit
    assignment vector (the derivative of the sum of future losses with
    respect to the hidden state) from the feature row
    x_tilde_n = [x_n, y*_n, 1].  Each step performs one SGD step on A
    against the bootstrap residual

        f(A) = x_tilde_n A - (dL/dx)^T - (x_tilde_{n+1} A) D_n

    (no gradient clipping on A), then converts the refreshed prediction
    c = x_tilde_n A into hidden-layer gradients through the immediate
    Jacobian: g_ab = outer(c * tanh'(z_n), [x, u]), a rank-one update.
    Setting ``full_update=False`` reproduces the ablation that drops the
    outer(x_tilde_{n+1}, f D^T) term from the gradient of ||f||^2.
    """

    def __init__(
        self,
        model: RnnModel,
        eta: float,
        tau: float,
        eta_a: float = 0.002,
        full_update: bool = True,
        rng: int | np.random.Generator = 0,
        record_gradients: bool = False,
    ):
        super().__init__(model, eta, tau, record_gradients)
        self.eta_a = eta_a
        self.full_update = full_update
        self.state = DniState(model.q, model.p, np.random.default_rng(rng))

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        model = self.model
        out = forward_step(model, u, target)
        grad_x = state_loss_gradient(model, out.e)
        phi_p = 1.0 - out.x_next**2
        dyn = phi_p[:, None] * model.W_a
        st = self.state
        xu = self._fill_xu(u)

        x_tilde_next = np.concatenate([out.x_next, np.asarray(target, dtype=float), [1.0]])
        f = dni_residual(st.A, st.x_tilde, x_tilde_next, grad_x, dyn)
        if not np.all(np.isfinite(f)):
            raise NumericError("DniTrainer: non-finite coefficient residual")
        # A -= eta_a * (outer(x_tilde, f) - outer(x_tilde_next, f D^T))
        _rank_one_update(st.A, -self.eta_a, st.x_tilde, f)
        if self.full_update:
            _rank_one_update(st.A, self.eta_a, x_tilde_next, f @ dyn.T)

        credit = st.x_tilde @ st.A
        phi_vec = credit * phi_p
        g_c = output_layer_gradient(out)
        # g_ab = outer(phi_vec, xu), so its norm factorizes.
        g_ab_sq = float(np.vdot(phi_vec, phi_vec) * np.vdot(xu, xu))
        scale = self._clip_scale(g_ab_sq + float(np.vdot(g_c, g_c)))
        if self.record_gradients:
            self.last_g_ab = scale * np.outer(phi_vec, xu)
            self.last_g_c = g_c * scale
        q = model.q
        alpha = -self.eta * scale
        _rank_one_update(model.W_a, alpha, phi_vec, xu[:q])
        _rank_one_update(model.W_b, alpha, phi_vec, xu[q:])
        model.W_c -= (self.eta * scale) * g_c
        model.x = out.x_next
        st.x_tilde = x_tilde_next
        return out.y


class FrozenLayerTrainer(_GradientTrainer):
    """RNN whose hidden layer stays at its random initialization.

    Only W_c is updated (clipped SGD on the output-layer gradient); W_a and
    W_b 'freeze' the random recurrent features.  Serves as the
    representation-learning ablation for the true online algorithms.
    """

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        out = forward_step(self.model, u, target)
        g_c = output_layer_gradient(out)
        scale = self._clip_scale(float(np.vdot(g_c, g_c)))
        if self.record_gradients:
            self.last_g_ab, self.last_g_c = None, g_c * scale
        self.model.W_c -= (self.eta * scale) * g_c
        self.model.x = out.x_next
        return out.y


class LmsTrainer:
    """Least-mean-squares adaptive linear filter: y = W u, no hidden layer.

    The per-step gradient -e u^T is clipped with the same threshold as the
    RNN trainers before the SGD update.
    """

    def __init__(self, input_dim: int, output_dim: int, eta: float, tau: float):
        if tau <= 0:
            raise ValueError(f"clipping threshold must be positive, got {tau}")
        self.W = np.zeros((output_dim, input_dim))
        self.eta = eta
        self.tau = tau
        self.last_update_norm: float | None = None

    def step(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        y = self.W @ u
        e = np.asarray(target, dtype=float) - y
        # ||outer(e, u)|| factorizes into ||e|| * ||u||.
        gnorm = float(np.linalg.norm(e) * np.linalg.norm(u))
        if not np.isfinite(gnorm):
            raise NumericError("LmsTrainer: non-finite gradient")
        scale = 1.0 if gnorm <= self.tau else self.tau / gnorm
        _rank_one_update(self.W, self.eta * scale, e, np.asarray(u, dtype=float))
        self.last_update_norm = min(gnorm, self.tau)
        return y
