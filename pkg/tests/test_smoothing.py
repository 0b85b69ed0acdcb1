"""Smoothing models: sampling, densities, conditional projection."""

import numpy as np
import pytest

from tmmp.basis import (
    bspline_basis,
    constraint_projection,
    difference_matrix,
    identity_basis,
)
from tmmp.errors import ConstraintError, LevelError, ParameterError
from tmmp.kernels import AR1, ARMA11, Matern, SquaredExponential, WhiteNoise
from tmmp.smoothing import (
    SmoothingModel,
    conditional_projection,
    log_density,
    middle_ref,
    ref,
    reparametrize_rw,
    rw_reconstruct,
    sample,
    sum_all,
    sum_range,
    time_ref,
)

KERNELS = [
    AR1(0.7, 0.8),
    ARMA11(0.5, 0.6, -0.3),
    SquaredExponential(0.4, 2.0),
    Matern(0.6, 1.5, 3.0),
    WhiteNoise(0.9),
]


def rw_model(order, kernel=None, constraints=None, basis=None):
    if kernel is None:
        kernel = WhiteNoise(1.0)
    if constraints is None:
        constraints = tuple([sum_all()] * order)
    return SmoothingModel(basis or identity_basis(), kernel, order, tuple(constraints))


from oracles import dense_mvn_logpdf, joint_conditional_oracle


# ---------------------------------------------------------------- sampling


def test_zero_variance_gives_zero_smoothing():
    model = rw_model(0, kernel=WhiteNoise(0.0))
    eps, delta = sample(model, np.arange(8.0), rng_seed=1)
    np.testing.assert_array_equal(eps, np.zeros(8))
    np.testing.assert_array_equal(delta, np.zeros(8))


def test_sample_deterministic_given_seed():
    model = rw_model(1, kernel=AR1(0.5, 0.7))
    a = sample(model, np.arange(10.0), rng_seed=99)
    b = sample(model, np.arange(10.0), rng_seed=99)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_b3_shape_constraints_hold():
    # r=2 with a pinned middle coefficient and first differences over 2..K
    model = SmoothingModel(
        bspline_basis(3, 2.5, domain=(0.0, 20.0)),
        WhiteNoise(0.5),
        2,
        (middle_ref(), sum_range(2, None)),
    )
    times = np.arange(21.0)
    for seed in range(50):
        _, delta = sample(model, times, rng_seed=seed)
        K = delta.size
        k_star = int(np.ceil(K / 2))
        assert abs(delta[k_star - 1]) < 1e-12
        assert abs(delta[-1] - delta[0]) < 1e-12  # telescoped first differences


def test_nmr_shape_constraints_hold():
    model = rw_model(1, constraints=(sum_all(),))
    for seed in range(50):
        _, delta = sample(model, np.arange(12.0), rng_seed=seed)
        assert abs(delta.sum()) < 1e-12


def test_ref_constraint_pins_time_index():
    model = rw_model(1, constraints=(time_ref(1990.0),))
    times = np.arange(1985.0, 1996.0)
    for seed in range(20):
        _, delta = sample(model, times, rng_seed=seed)
        assert abs(delta[5]) < 1e-12


def test_sample_covariance_matches_projection_form():
    # r=1, white noise, sum-to-zero: Cov(delta) = sigma^2 * P P'
    sigma2 = 0.8
    K = 6
    model = rw_model(1, kernel=WhiteNoise(sigma2))
    times = np.arange(float(K))
    n = 100_000
    draws = np.empty((n, K))
    for i in range(n):
        _, draws[i] = sample(model, times, rng_seed=i)
    P = constraint_projection(difference_matrix(K, 1))
    expected = sigma2 * P @ P.T
    emp = np.cov(draws.T, bias=True)
    mc_se = np.sqrt(
        (np.outer(np.diag(expected), np.diag(expected)) + expected ** 2) / n
    )
    assert np.all(np.abs(emp - expected) <= 3 * mc_se + 1e-12)


def test_sample_marginal_variance_r0():
    model = rw_model(0, kernel=AR1(0.5, 0.8))
    n = 20_000
    draws = np.array([sample(model, np.arange(4.0), rng_seed=i)[1] for i in range(n)])
    np.testing.assert_allclose(draws.var(axis=0), 0.5, atol=4 * 0.5 * np.sqrt(2 / n))


# ---------------------------------------------------------------- densities


def test_log_density_r0_matches_dense_oracle():
    kernel = AR1(0.7, 0.6)
    model = rw_model(0, kernel=kernel)
    times = np.arange(7.0)
    grid = times
    cov = np.asarray(kernel.at_lag(np.abs(grid[:, None] - grid[None, :])))
    rng = np.random.default_rng(2)
    for _ in range(10):
        delta = rng.standard_normal(7) * 0.5
        assert log_density(model, delta, times) == pytest.approx(
            dense_mvn_logpdf(delta, cov), rel=1e-9
        )


def test_zero_is_the_mode():
    model = rw_model(2, constraints=(middle_ref(), sum_range(2, None)), kernel=WhiteNoise(0.3))
    times = np.arange(9.0)
    at_zero = log_density(model, np.zeros(9), times)
    for seed in range(25):
        _, delta = sample(model, times, rng_seed=seed)
        assert log_density(model, delta, times) <= at_zero + 1e-12


def test_log_density_quadratic_scaling():
    model = rw_model(1, kernel=WhiteNoise(1.0))
    _, delta = sample(model, np.arange(6.0), rng_seed=3)
    d1 = difference_matrix(6, 1) @ delta
    gap = log_density(model, delta) - log_density(model, 2 * delta)
    assert gap == pytest.approx(1.5 * float(d1 @ d1), rel=1e-10)


def test_log_density_rejects_constraint_violation():
    model = rw_model(1)
    with pytest.raises(ConstraintError, match="difference order 0"):
        log_density(model, np.ones(5))


# ------------------------------------------------- conditional projection


def test_ar1_closed_form_projection():
    for rho in (0.5, 0.8, 0.95):
        kernel = AR1(0.05 / (1 - rho ** 2), rho)
        model = rw_model(0, kernel=kernel)
        delta_obs = np.array([0.3, -0.2, 1.0])
        mean, cov = conditional_projection(model, delta_obs, horizon=20)
        expected = delta_obs[-1] * rho ** np.arange(1, 21)
        np.testing.assert_allclose(mean, expected, atol=1e-12)
        assert cov.shape == (20, 20)


def test_projection_horizon_zero():
    mean, cov = conditional_projection(rw_model(0, kernel=AR1(1.0, 0.5)), np.ones(3), 0)
    assert mean.shape == (0,)
    assert cov.shape == (0, 0)


def test_se_projection_matches_schur_oracle():
    kernel = SquaredExponential(0.9, 2.0)
    model = rw_model(0, kernel=kernel)
    delta_obs = np.array([0.4, -0.1])
    mean, cov = conditional_projection(model, delta_obs, horizon=5)
    exp_mean, exp_cov = joint_conditional_oracle(kernel, 0, (), 2, 5, delta_obs)
    np.testing.assert_allclose(mean, exp_mean, atol=1e-9)
    np.testing.assert_allclose(cov, exp_cov, atol=1e-9)


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("order", [0, 1, 2])
def test_projection_matches_constrained_joint_oracle(kernel, order):
    n_obs, horizon = 8, 4
    constraints = tuple([sum_all(), sum_range(2, None)][:order])
    model = rw_model(order, kernel=kernel, constraints=constraints)
    _, delta_obs = sample(model, np.arange(float(n_obs)), rng_seed=11)
    mean, cov = conditional_projection(model, delta_obs, horizon)
    exp_mean, exp_cov = joint_conditional_oracle(
        kernel, order, constraints, n_obs, horizon, delta_obs
    )
    np.testing.assert_allclose(mean, exp_mean, atol=1e-9)
    np.testing.assert_allclose(cov, exp_cov, atol=1e-9)


def test_stationary_reversion():
    kernel = AR1(1.0, 0.8)
    model = rw_model(0, kernel=kernel)
    delta_obs = np.array([2.0])
    # pick a horizon where the kernel has decayed below 1e-8 * variance
    h = int(np.ceil(np.log(1e-8) / np.log(0.8))) + 1
    mean, _ = conditional_projection(model, delta_obs, horizon=h)
    assert abs(mean[-1]) < 1e-6 * abs(delta_obs[-1])


def test_rw1_projection_holds_last_level():
    model = rw_model(1, kernel=WhiteNoise(0.4))
    _, delta_obs = sample(model, np.arange(9.0), rng_seed=4)
    mean, _ = conditional_projection(model, delta_obs, horizon=6)
    np.testing.assert_allclose(mean, delta_obs[-1], atol=1e-10)


def test_rw2_projection_extends_linear_trend():
    model = rw_model(2, constraints=(sum_all(), sum_range(2, None)), kernel=WhiteNoise(0.4))
    _, delta_obs = sample(model, np.arange(10.0), rng_seed=8)
    mean, _ = conditional_projection(model, delta_obs, horizon=5)
    slope = delta_obs[-1] - delta_obs[-2]
    expected = delta_obs[-1] + slope * np.arange(1, 6)
    np.testing.assert_allclose(mean, expected, atol=1e-10)


@pytest.mark.parametrize("order", [1, 2])
def test_projection_variance_monotone(order):
    constraints = tuple([sum_all(), sum_range(2, None)][:order])
    for kernel in KERNELS:
        model = rw_model(order, kernel=kernel, constraints=constraints)
        _, delta_obs = sample(model, np.arange(10.0), rng_seed=13)
        _, cov = conditional_projection(model, delta_obs, horizon=8)
        marginals = np.diag(cov)
        assert np.all(np.diff(marginals) >= -1e-10)


def test_projection_needs_level_information():
    model = rw_model(1)
    with pytest.raises(LevelError):
        conditional_projection(model, np.array([]), horizon=3)


# ------------------------------------------------------ reparametrization


def test_reparametrize_constant_path():
    alpha, gamma = reparametrize_rw(np.full(6, 3.25), d=1)
    assert alpha[0] == pytest.approx(3.25)
    np.testing.assert_allclose(gamma, np.zeros(5), atol=1e-14)


def test_reparametrize_hand_case():
    alpha, gamma = reparametrize_rw(np.array([0.0, 1.0, 3.0]), d=1)
    assert alpha[0] == pytest.approx(4.0 / 3.0)
    np.testing.assert_allclose(gamma, [1.0, 2.0])
    np.testing.assert_allclose(
        rw_reconstruct(alpha, gamma, d=1), [0.0, 1.0, 3.0], atol=1e-12
    )


@pytest.mark.parametrize("d", [1, 2])
def test_reparametrize_round_trip(d):
    rng = np.random.default_rng(21)
    for _ in range(1000):
        path = rng.standard_normal(rng.integers(d + 1, 40))
        alpha, gamma = reparametrize_rw(path, d)
        np.testing.assert_allclose(rw_reconstruct(alpha, gamma, d), path, atol=1e-10)


def test_reparametrize_size_checks():
    with pytest.raises(ParameterError):
        reparametrize_rw(np.ones(2), d=2)
    with pytest.raises(ParameterError):
        reparametrize_rw(np.ones(4), d=3)


def test_model_validation():
    with pytest.raises(ConstraintError):
        SmoothingModel(identity_basis(), WhiteNoise(1.0), 1, ())
    with pytest.raises(ConstraintError):
        SmoothingModel(identity_basis(), WhiteNoise(1.0), 0, (ref(1),))
