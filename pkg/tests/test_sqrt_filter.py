import logging

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from gplfm.errors import DataError, InvalidParameterError
from gplfm.kernels import KernelSpec, kernel_eval, matern_to_sde
from gplfm.sqrt_filter import (
    GaussianBelief,
    TrajectoryKind,
    backward_sample,
    backward_samples,
    kalman_log_likelihood,
    psd_sqrt,
    sqrt_kalman_filter,
    sqrt_rts_smoother,
)
from gplfm.state_space import (
    ContinuousStateSpace,
    DiscreteStateSpace,
    SdofParams,
    build_observation,
    build_sdof,
    discretize,
)


def _random_model(rng, n, p, m=1):
    M = rng.standard_normal((n, n))
    A = 0.95 * M / np.max(np.abs(np.linalg.eigvals(M)))
    G = rng.standard_normal((n, n))
    Q = 0.1 * G @ G.T + 0.01 * np.eye(n)
    return DiscreteStateSpace(
        A=A,
        B=rng.standard_normal((n, m)),
        Q=Q,
        C=rng.standard_normal((p, n)),
        D=rng.standard_normal((p, m)),
        dt=0.1,
        R=np.diag(rng.uniform(0.1, 1.0, p)),
    )


def _scalar_model():
    return DiscreteStateSpace(
        A=[[0.9]], B=[[1.0]], Q=[[1.0]], C=[[1.0]], D=[[0.0]], dt=1.0, R=[[1.0]]
    )


def _simulate(rng, model, T):
    n, p = model.n_states, model.C.shape[0]
    u = rng.standard_normal((model.B.shape[1], T))
    x = rng.standard_normal(n)
    y = np.zeros((p, T))
    for t in range(T):
        y[:, t] = model.C @ x + model.D @ u[:, t] + rng.multivariate_normal(np.zeros(p), model.R)
        x = model.A @ x + model.B @ u[:, t] + rng.multivariate_normal(np.zeros(n), model.Q)
    return y, u


def _naive_filter(model, y, u, mean, cov):
    """Covariance-form Kalman filter, update then predict."""
    A, B, C, D, Q, R = model.A, model.B, model.C, model.D, model.Q, model.R
    x, P = mean.copy(), cov.copy()
    means, covs, log_likelihood = [], [], 0.0
    n = A.shape[0]
    for t in range(y.shape[1]):
        S = C @ P @ C.T + R
        K = P @ C.T @ np.linalg.inv(S)
        e = y[:, t] - C @ x - D @ u[:, t]
        log_likelihood += multivariate_normal(np.zeros(len(e)), S).logpdf(e)
        x = x + K @ e
        I_KC = np.eye(n) - K @ C
        P = I_KC @ P @ I_KC.T + K @ R @ K.T
        means.append(x)
        covs.append(P)
        x = A @ x + B @ u[:, t]
        P = A @ P @ A.T + Q
    return np.array(means), np.array(covs), log_likelihood


@pytest.mark.parametrize("seed", range(100))
def test_filter_matches_covariance_form(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    p = int(rng.integers(1, 3))
    model = _random_model(rng, n, p)
    y, u = _simulate(rng, model, 200)
    mean0 = rng.standard_normal(n)
    F = rng.standard_normal((n, n))
    cov0 = F @ F.T + np.eye(n)

    init = GaussianBelief.from_cov(mean0, cov0)
    filtered, log_likelihood = sqrt_kalman_filter(model, y, u, init)
    means, covs, expected = _naive_filter(model, y, u, mean0, cov0)

    assert filtered.kind is TrajectoryKind.FILTERED
    np.testing.assert_allclose(filtered.means, means, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(filtered.covariances, covs, rtol=1e-8, atol=1e-8)
    assert log_likelihood == pytest.approx(expected, rel=1e-8)

    fast = kalman_log_likelihood(model, y, u, init)
    assert fast == pytest.approx(log_likelihood, rel=1e-8, abs=1e-6)


def _gp_model(smoothness, dt, noise):
    gp = matern_to_sde(KernelSpec(smoothness, 1.5, 0.1))
    d = gp.order
    sys = ContinuousStateSpace(A=gp.F, B=np.zeros((d, 1)), L=gp.L, q=[[gp.q]], C=gp.H)
    model = discretize(sys, dt, R=[[noise]])
    return gp, model


@pytest.mark.parametrize("smoothness", [0.5, 1.5])
def test_smoother_matches_dense_gp_regression(smoothness):
    dt, noise, T = 0.02, 0.1, 200
    gp, model = _gp_model(smoothness, dt, noise)
    t = dt * np.arange(T)
    kernel = KernelSpec(smoothness, 1.5, 0.1)
    K = kernel_eval(kernel, t[:, None] - t[None, :])
    y = np.random.default_rng(7).multivariate_normal(np.zeros(T), K + noise * np.eye(T))

    init = GaussianBelief(np.zeros(gp.order), psd_sqrt(gp.P_inf))
    filtered, log_likelihood = sqrt_kalman_filter(model, y[None, :], None, init)
    smoothed = sqrt_rts_smoother(model, filtered)

    Ky = K + noise * np.eye(T)
    mean = K @ np.linalg.solve(Ky, y)
    var = np.diag(K - K @ np.linalg.solve(Ky, K))
    assert smoothed.kind is TrajectoryKind.SMOOTHED
    np.testing.assert_allclose(smoothed.means[:, 0], mean, atol=1e-6)
    np.testing.assert_allclose(smoothed.variances[:, 0], var, atol=1e-6)
    expected = multivariate_normal(np.zeros(T), Ky).logpdf(y)
    assert log_likelihood == pytest.approx(expected, rel=1e-8)


def test_steady_state_likelihood(caplog):
    model = _scalar_model()
    rng = np.random.default_rng(0)
    y, u = _simulate(rng, model, 2000)
    init = GaussianBelief.from_cov([0.0], [[10.0]])
    _, expected = sqrt_kalman_filter(model, y, u, init)
    caplog.set_level(logging.DEBUG, logger="gplfm.sqrt_filter")
    assert kalman_log_likelihood(model, y, u, init) == pytest.approx(expected, rel=1e-9)
    assert "steady state" in caplog.text


def test_empty_record_likelihood():
    model = _scalar_model()
    init = GaussianBelief.from_cov([0.0], [[1.0]])
    assert kalman_log_likelihood(model, np.zeros((1, 0)), np.zeros((1, 0)), init) == 0.0


def test_smoother_ends_at_filter():
    rng = np.random.default_rng(3)
    model = _random_model(rng, 3, 1)
    y, u = _simulate(rng, model, 50)
    init = GaussianBelief.from_cov(np.zeros(3), np.eye(3))
    filtered, _ = sqrt_kalman_filter(model, y, u, init)
    smoothed = sqrt_rts_smoother(model, filtered)
    np.testing.assert_allclose(smoothed.means[-1], filtered.means[-1])
    np.testing.assert_allclose(smoothed.covariances[-1], filtered.covariances[-1])
    assert np.all(smoothed.variances <= filtered.variances + 1e-10)
    assert len(smoothed) == 50
    np.testing.assert_allclose(smoothed[10].cov, smoothed.covariances[10])


def test_backward_sampler_moments():
    _, model = _gp_model(1.5, 0.02, 0.1)
    y = np.sin(np.linspace(0.0, 3.0, 40))[None, :]
    gp = matern_to_sde(KernelSpec(1.5, 1.5, 0.1))
    init = GaussianBelief(np.zeros(2), psd_sqrt(gp.P_inf))
    filtered, _ = sqrt_kalman_filter(model, y, None, init)
    smoothed = sqrt_rts_smoother(model, filtered)

    n_draws = 4000
    draws = backward_samples(model, filtered, 11, n_draws)
    assert draws.shape == (n_draws, 40, 2)
    sample_mean = draws.mean(axis=0)
    sample_var = draws.var(axis=0, ddof=1)
    tolerance = 5.0 * np.sqrt(smoothed.variances / n_draws)
    assert np.all(np.abs(sample_mean - smoothed.means) <= tolerance)
    np.testing.assert_allclose(sample_var, smoothed.variances, rtol=0.1)


def test_backward_sample_is_seeded():
    rng = np.random.default_rng(5)
    model = _random_model(rng, 2, 1)
    y, u = _simulate(rng, model, 30)
    init = GaussianBelief.from_cov(np.zeros(2), np.eye(2))
    filtered, _ = sqrt_kalman_filter(model, y, u, init)
    first = backward_sample(model, filtered, 42)
    assert first.shape == (30, 2)
    np.testing.assert_array_equal(first, backward_sample(model, filtered, 42))
    assert not np.array_equal(first, backward_sample(model, filtered, 43))


def test_psd_sqrt():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((4, 4))
    P = F @ F.T
    S = psd_sqrt(P)
    np.testing.assert_allclose(S.T @ S, P, atol=1e-10)
    np.testing.assert_allclose(np.tril(S, -1), 0.0)

    v = rng.standard_normal((4, 1))
    singular = v @ v.T
    np.testing.assert_allclose(psd_sqrt(singular).T @ psd_sqrt(singular), singular, atol=1e-10)


def test_filter_rejects_bad_inputs():
    model = _scalar_model()
    init = GaussianBelief.from_cov([0.0], [[1.0]])
    with pytest.raises(DataError):
        sqrt_kalman_filter(model, np.zeros((1, 10)), np.zeros((1, 9)), init)
    with pytest.raises(InvalidParameterError):
        sqrt_kalman_filter(model.with_noise([[0.0]]), np.zeros((1, 10)), None, init)


def test_single_observation_likelihood():
    model = DiscreteStateSpace(
        A=[[1.0]], B=[[0.0]], Q=[[0.0]], C=[[1.0]], D=[[0.0]], dt=1.0, R=[[1.0]]
    )
    init = GaussianBelief.from_cov([0.0], [[1.0]])
    _, log_likelihood = sqrt_kalman_filter(model, [[0.0]], None, init)
    assert log_likelihood == pytest.approx(-0.5 * np.log(4.0 * np.pi), rel=1e-12)
    assert log_likelihood == pytest.approx(-1.26551, abs=1e-5)
    assert kalman_log_likelihood(model, [[0.0]], None, init) == pytest.approx(log_likelihood)


def _noiseless_oscillator(T=300):
    params = SdofParams(m=1.0, k=100.0, c=0.4)
    sys = build_observation(build_sdof(params), "displacement", params)
    exact = discretize(sys, 0.01)
    model = DiscreteStateSpace(
        A=exact.A, B=exact.B, Q=np.zeros((2, 2)), C=exact.C, D=exact.D, dt=0.01, R=[[1e-16]]
    )
    u = 5.0 * np.sin(3.0 * 0.01 * np.arange(T))[None, :]
    states = np.zeros((T, 2))
    states[0] = [0.1, -0.5]
    for t in range(T - 1):
        states[t + 1] = model.A @ states[t] + model.B @ u[:, t]
    y = states @ model.C.T + u.T @ model.D.T
    return model, states, y.T, u


def test_noiseless_filter_recovers_states():
    model, states, y, u = _noiseless_oscillator()
    init = GaussianBelief.from_cov(np.zeros(2), np.eye(2))
    filtered, _ = sqrt_kalman_filter(model, y, u, init)
    np.testing.assert_allclose(filtered.means[1:], states[1:], rtol=0.0, atol=1e-8)
    assert filtered.means[0, 0] == pytest.approx(states[0, 0], abs=1e-8)


def test_noiseless_smoother_and_sample_follow_simulation():
    model, states, y, u = _noiseless_oscillator()
    init = GaussianBelief.from_cov(np.zeros(2), np.eye(2))
    filtered, _ = sqrt_kalman_filter(model, y, u, init)
    smoothed = sqrt_rts_smoother(model, filtered)
    np.testing.assert_allclose(smoothed.means, states, rtol=0.0, atol=1e-6)
    draw = backward_sample(model, filtered, 0)
    np.testing.assert_allclose(draw, smoothed.means, rtol=0.0, atol=1e-6)
