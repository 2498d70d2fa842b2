"""
Square-root Kalman filter, RTS smoother and backward sampler for linear Gaussian models.

Covariances are carried as upper-triangular factors S with S'S = P. Every covariance update is a
QR triangularisation of a stacked pre-array, so the implied covariance is positive semi-definite
by construction. Observations are (p, T) arrays, inputs (m, T).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.signal import lfilter

from gplfm.errors import DataError, FilterDivergenceError, InvalidParameterError
from gplfm.state_space import DiscreteStateSpace

LOGGER = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


def psd_sqrt(P) -> np.ndarray:
    """Upper-triangular S with S'S = P for a symmetric positive semi-definite P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    factor = np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T
    return _triangularize(factor, P.shape[0])


def _triangularize(pre_array: np.ndarray, n: int) -> np.ndarray:
    """R (n x n, upper) with R'R = pre_array' pre_array."""
    if pre_array.shape[0] < n:
        pre_array = np.vstack([pre_array, np.zeros((n - pre_array.shape[0], n))])
    return qr(pre_array, mode="r", check_finite=False)[0][:n, :n]


def _triangular_solve(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """X^{-1} Y for upper-triangular X; pseudo-inverse with zeroed null directions if singular."""
    diag = np.abs(np.diag(X))
    scale = diag.max() if diag.size else 0.0
    if scale > 0 and diag.min() > 1e-13 * scale:
        return solve_triangular(X, Y, lower=False, check_finite=False)
    if scale == 0:
        return np.zeros((X.shape[1],) + Y.shape[1:])
    return np.linalg.pinv(X, rcond=1e-13) @ Y


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    sqrt_cov: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.sqrt_cov.T @ self.sqrt_cov

    @classmethod
    def from_cov(cls, mean, cov) -> "GaussianBelief":
        return cls(np.asarray(mean, dtype=float).ravel(), psd_sqrt(cov))


class TrajectoryKind(str, Enum):
    FILTERED = "filtered"
    SMOOTHED = "smoothed"


@dataclass
class StateTrajectory:
    """Beliefs at uniformly spaced times, stored as stacked arrays."""

    times: np.ndarray
    means: np.ndarray
    sqrt_covs: np.ndarray
    kind: TrajectoryKind
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, index: int) -> GaussianBelief:
        return GaussianBelief(self.means[index], self.sqrt_covs[index])

    @property
    def covariances(self) -> np.ndarray:
        return np.einsum("tki,tkj->tij", self.sqrt_covs, self.sqrt_covs)

    @property
    def variances(self) -> np.ndarray:
        return np.sum(self.sqrt_covs**2, axis=1)


def _prepare(model: DiscreteStateSpace, y, u) -> tuple[np.ndarray, np.ndarray]:
    y = np.atleast_2d(np.asarray(y, dtype=float))
    p = model.C.shape[0]
    if y.shape[0] != p and y.shape[1] == p:
        y = y.T
    T = y.shape[1]
    m = model.B.shape[1]
    if u is None:
        u = np.zeros((m, T))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != m and u.shape[1] == m:
        u = u.T
    if u.shape != (m, T):
        raise DataError(f"inputs have shape {u.shape}, expected {(m, T)}")
    if y.shape[0] != p:
        raise DataError(f"observations have shape {y.shape}, expected ({p}, T)")
    return y, u


def _noise_factor(model: DiscreteStateSpace) -> np.ndarray:
    R = model.R
    if np.any(np.diag(R) <= 0):
        raise InvalidParameterError("measurement noise covariance R must be positive definite")
    return psd_sqrt(R)


def _update(x, S, y_t, u_t, C, D, U_r, step):
    """Measurement update. Returns (mean, sqrt_cov, log-density of the innovation)."""
    p, n = C.shape
    pre = np.zeros((p + n, p + n))
    pre[:p, :p] = U_r
    pre[p:, :p] = S @ C.T
    pre[p:, p:] = S
    post = _triangularize(pre, p + n)
    X = post[:p, :p]
    Y = post[:p, p:]
    diag = np.abs(np.diag(X))
    if not np.all(np.isfinite(post)) or diag.min() <= 1e-300:
        raise FilterDivergenceError(
            f"innovation covariance is numerically singular at step {step}", step=step
        )
    innovation = y_t - C @ x - D @ u_t
    w = solve_triangular(X, innovation, trans="T", lower=False, check_finite=False)
    x_new = x + Y.T @ w
    log_density = -0.5 * (p * _LOG_2PI + 2.0 * np.sum(np.log(diag)) + w @ w)
    return x_new, post[p:, p:], log_density


def _predict(x, S, u_t, A, B, U_q):
    n = A.shape[0]
    return A @ x + B @ u_t, _triangularize(np.vstack([S @ A.T, U_q]), n)


def sqrt_kalman_filter(
    model: DiscreteStateSpace,
    y,
    u,
    init: GaussianBelief,
    t0: float = 0.0,
) -> tuple[StateTrajectory, float]:
    """
    Filtered beliefs p(x_t | y_1..t) and the log marginal likelihood log p(y_1..T).

    `init` is the prior on the state at the first observation time.
    """
    y, u = _prepare(model, y, u)
    n = model.n_states
    T = y.shape[1]
    A, B, C, D = model.A, model.B, model.C, model.D
    U_r = _noise_factor(model)
    U_q = psd_sqrt(model.Q)

    means = np.zeros((T, n))
    sqrt_covs = np.zeros((T, n, n))
    log_likelihood = 0.0
    x = np.asarray(init.mean, dtype=float).copy()
    S = np.asarray(init.sqrt_cov, dtype=float)
    for t in range(T):
        x, S, log_density = _update(x, S, y[:, t], u[:, t], C, D, U_r, t)
        log_likelihood += log_density
        means[t] = x
        sqrt_covs[t] = S
        if t + 1 < T:
            x, S = _predict(x, S, u[:, t], A, B, U_q)

    times = t0 + model.dt * np.arange(T)
    trajectory = StateTrajectory(times, means, sqrt_covs, TrajectoryKind.FILTERED, inputs=u)
    return trajectory, float(log_likelihood)


def kalman_log_likelihood(
    model: DiscreteStateSpace,
    y,
    u,
    init: GaussianBelief,
    steady_rtol: float = 1e-12,
    min_transient: int = 10,
) -> float:
    """
    Log marginal likelihood, fast path for repeated evaluation.

    The square-root recursion runs until the predicted covariance factor stops changing; the
    remaining steps share one gain, so the mean recursion is an LTI filter run as first-order
    modal sections with `lfilter`. Falls back to the full loop when the closed-loop matrix is
    poorly conditioned for diagonalisation.
    """
    y, u = _prepare(model, y, u)
    T = y.shape[1]
    if T == 0:
        return 0.0
    A, B, C, D = model.A, model.B, model.C, model.D
    U_r = _noise_factor(model)
    U_q = psd_sqrt(model.Q)

    x = np.asarray(init.mean, dtype=float).copy()
    S = np.asarray(init.sqrt_cov, dtype=float)
    P_prev = None
    log_likelihood = 0.0
    for t in range(T):
        P = S.T @ S
        if P_prev is not None and t >= min_transient:
            scale = max(np.abs(P).max(), 1e-300)
            if np.abs(P - P_prev).max() <= steady_rtol * scale:
                tail = _steady_state_tail(model, y[:, t:], u[:, t:], x, S, U_r)
                if tail is not None:
                    LOGGER.debug("filter reached steady state at step %d of %d", t, T)
                    return float(log_likelihood + tail)
        P_prev = P
        x, S, log_density = _update(x, S, y[:, t], u[:, t], C, D, U_r, t)
        log_likelihood += log_density
        if t + 1 < T:
            x, S = _predict(x, S, u[:, t], A, B, U_q)
    return float(log_likelihood)


def _steady_state_tail(model, y, u, x_pred, S_pred, U_r) -> float | None:
    A, B, C, D = model.A, model.B, model.C, model.D
    p, n = C.shape
    pre = np.zeros((p + n, p + n))
    pre[:p, :p] = U_r
    pre[p:, :p] = S_pred @ C.T
    pre[p:, p:] = S_pred
    post = _triangularize(pre, p + n)
    X, Y = post[:p, :p], post[:p, p:]
    diag = np.abs(np.diag(X))
    if diag.min() <= 1e-300:
        return None
    K = Y.T @ solve_triangular(X, np.eye(p), trans="T", lower=False)

    # predictor form: x[t+1] = Φ x[t] + A K (y - D u) + B u
    Phi = A @ (np.eye(n) - K @ C)
    drive = (A @ K) @ (y - D @ u) + B @ u
    eigenvalues, V = np.linalg.eig(Phi)
    if np.linalg.cond(V) > 1e8 or np.any(np.abs(eigenvalues) >= 1.0):
        return None
    modal_drive = np.linalg.solve(V, drive.astype(complex))
    modal_x0 = np.linalg.solve(V, x_pred.astype(complex))
    modes = np.empty_like(modal_drive)
    for i, lam in enumerate(eigenvalues):
        modes[i], _ = lfilter([0.0, 1.0], [1.0, -lam], modal_drive[i], zi=[modal_x0[i]])
    x_pred_path = (V @ modes).real
    innovations = y - C @ x_pred_path - D @ u
    w = solve_triangular(X, innovations, trans="T", lower=False, check_finite=False)
    T = y.shape[1]
    return float(-0.5 * (T * (p * _LOG_2PI + 2.0 * np.sum(np.log(diag))) + np.sum(w * w)))


@dataclass
class _BackwardPass:
    """Conditionals x_t | x_{t+1}, y_1..t: mean m_t + G_t (x_{t+1} - x̂_{t+1}), cov Z'Z."""

    gains: np.ndarray
    sqrt_conds: np.ndarray
    predicted: np.ndarray


def _backward_pass(model: DiscreteStateSpace, filtered: StateTrajectory) -> _BackwardPass:
    T, n = filtered.means.shape
    A, B = model.A, model.B
    U_q = psd_sqrt(model.Q)
    u = filtered.inputs
    if u.size == 0:
        u = np.zeros((B.shape[1], T))
    gains = np.zeros((max(T - 1, 0), n, n))
    sqrt_conds = np.zeros((max(T - 1, 0), n, n))
    predicted = np.zeros((max(T - 1, 0), n))
    for t in range(T - 1):
        S = filtered.sqrt_covs[t]
        pre = np.zeros((2 * n, 2 * n))
        pre[:n, :n] = S @ A.T
        pre[:n, n:] = S
        pre[n:, :n] = U_q
        post = _triangularize(pre, 2 * n)
        X, Y, Z = post[:n, :n], post[:n, n:], post[n:, n:]
        gains[t] = _triangular_solve(X, Y).T
        sqrt_conds[t] = Z
        predicted[t] = A @ filtered.means[t] + B @ u[:, t]
    return _BackwardPass(gains, sqrt_conds, predicted)


def sqrt_rts_smoother(model: DiscreteStateSpace, filtered: StateTrajectory) -> StateTrajectory:
    """Smoothed beliefs p(x_t | y_1..T); the last belief is the last filtered belief."""
    T, n = filtered.means.shape
    if filtered.sqrt_covs.shape != (T, n, n) or n != model.n_states:
        raise DataError("filtered trajectory does not match the model dimensions")
    backward = _backward_pass(model, filtered)
    means = filtered.means.copy()
    sqrt_covs = filtered.sqrt_covs.copy()
    for t in range(T - 2, -1, -1):
        G = backward.gains[t]
        means[t] = filtered.means[t] + G @ (means[t + 1] - backward.predicted[t])
        pre = np.vstack([backward.sqrt_conds[t], sqrt_covs[t + 1] @ G.T])
        sqrt_covs[t] = _triangularize(pre, n)
    return StateTrajectory(
        filtered.times, means, sqrt_covs, TrajectoryKind.SMOOTHED, inputs=filtered.inputs
    )


def backward_samples(
    model: DiscreteStateSpace,
    filtered: StateTrajectory,
    rng_seed: int | np.random.Generator | None,
    n_samples: int,
) -> np.ndarray:
    """`n_samples` joint draws from p(x_1..T | y_1..T), shape (n_samples, T, n)."""
    rng = np.random.default_rng(rng_seed)
    T, n = filtered.means.shape
    backward = _backward_pass(model, filtered)
    draws = np.zeros((n_samples, T, n))
    if T == 0:
        return draws
    draws[:, -1] = filtered.means[-1] + rng.standard_normal((n_samples, n)) @ filtered.sqrt_covs[-1]
    for t in range(T - 2, -1, -1):
        G = backward.gains[t]
        mean = filtered.means[t] + (draws[:, t + 1] - backward.predicted[t]) @ G.T
        draws[:, t] = mean + rng.standard_normal((n_samples, n)) @ backward.sqrt_conds[t]
    return draws


def backward_sample(
    model: DiscreteStateSpace,
    filtered: StateTrajectory,
    rng_seed: int | np.random.Generator | None,
) -> np.ndarray:
    """One joint draw from the smoothing distribution, shape (T, n)."""
    return backward_samples(model, filtered, rng_seed, 1)[0]
