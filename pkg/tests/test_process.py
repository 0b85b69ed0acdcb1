"""Process-model composition, recursion, and projections."""

import numpy as np
import pytest
from scipy.special import expit, logit

from tmmp.basis import bspline_basis, identity_basis
from tmmp.errors import CoverageError, GridError, ParameterError
from tmmp.kernels import AR1, WhiteNoise
from tmmp.process import (
    FittedState,
    GbdNonlinearCovariate,
    GridTable,
    LinearCovariate,
    LinearTrend,
    Link,
    LogisticTransition,
    NoCovariate,
    NoSystematic,
    PiecewiseLogCovariate,
    ProcessModel,
    Trapezoid,
    evaluate_eta,
    fpem_transition_step,
    inverse_fpem_transition_step,
    project_default,
    project_pooled,
    projection_times,
    simulate,
)
from tmmp.smoothing import SmoothingModel, middle_ref, sample, sum_range


def empty_model(populations=("A", "B"), times=None, link="identity", smoother=None):
    times = np.arange(10.0) if times is None else times
    smoother = smoother or SmoothingModel(identity_basis(), WhiteNoise(0.0))
    return ProcessModel(
        Link(link), NoCovariate(), NoSystematic(), smoother, populations, times
    )


def b3_like_model(populations=("A",), times=None, sigma2=0.04):
    times = np.arange(21.0) if times is None else times
    smoother = SmoothingModel(
        bspline_basis(3, 2.5), WhiteNoise(sigma2), 2, (middle_ref(), sum_range(2, None))
    )
    return ProcessModel(
        Link("log"), NoCovariate(), NoSystematic(), smoother, populations, times
    )


def covariate_table(populations, times, fn, name="X"):
    values = np.array([[fn(p, t) for t in times] for p in populations])
    return {name: GridTable(populations, times, values, name=name)}


# ------------------------------------------------------------------ links


@pytest.mark.parametrize("name", ["identity", "log", "log10", "logit"])
def test_link_round_trip(name):
    link = Link(name)
    x = np.array([0.05, 0.3, 0.7]) if name == "logit" else np.array([0.2, 1.0, 7.5])
    np.testing.assert_allclose(link.inverse(link.apply(x)), x, atol=1e-12)


def test_unknown_link_rejected():
    with pytest.raises(ParameterError):
        Link("probit")


# ------------------------------------------------------------- evaluation


def test_all_zero_components_identity_link():
    model = empty_model()
    eta = evaluate_eta(model, {}, None, np.zeros((2, 10)))
    np.testing.assert_array_equal(eta, np.zeros((2, 10)))


def test_link_round_trip_through_evaluation():
    times = np.arange(8.0)
    pops = ("A", "B", "C")
    covs = covariate_table(pops, times, lambda p, t: 1.0 + 0.1 * t)
    model = ProcessModel(
        Link("log"),
        LinearCovariate(("X",)),
        LinearTrend(),
        SmoothingModel(identity_basis(), WhiteNoise(0.0)),
        pops,
        times,
        offsets=GridTable(pops, times, np.full((3, 8), 0.25), name="offset"),
    )
    params = {
        "beta0": np.array([0.1, -0.2, 0.0]),
        "beta": np.array([0.5]),
        "alpha0": 0.3,
        "alpha1": -0.05,
        "t_star": 4.0,
    }
    rng = np.random.default_rng(0)
    eps = 0.1 * rng.standard_normal((3, 8))
    eta = evaluate_eta(model, params, covs, eps)
    expected_linkscale = (
        params["beta0"][:, None]
        + 0.5 * (1.0 + 0.1 * times)[None, :]
        + 0.3
        - 0.05 * (times - 4.0)[None, :]
        + 0.25
        + eps
    )
    np.testing.assert_allclose(np.log(eta), expected_linkscale, atol=1e-10)


def test_piecewise_covariate_switches_off_below_cutoff():
    times = np.arange(4.0)
    pops = ("A",)
    covs = covariate_table(pops, times, lambda p, t: 10.0 + 5 * t, name="U5MR")
    model = ProcessModel(
        Link("log"),
        PiecewiseLogCovariate("U5MR"),
        NoSystematic(),
        SmoothingModel(identity_basis(), WhiteNoise(0.0)),
        pops,
        times,
    )
    params = {"beta0": -1.0, "beta1": 0.8, "beta2": 17.0}
    eta = evaluate_eta(model, params, covs, np.zeros((1, 4)))
    linkscale = np.log(eta[0])
    # X = 10, 15 below the cutoff: intercept only
    np.testing.assert_allclose(linkscale[:2], -1.0, atol=1e-12)
    # X = 20, 25 above: hinge active and continuous in X
    np.testing.assert_allclose(
        linkscale[2:], -1.0 + 0.8 * (np.log([20.0, 25.0]) - np.log(17.0)), atol=1e-12
    )


def test_gbd_covariate_formula():
    times = np.arange(3.0)
    pops = ("A",)
    covs = {
        "LDI": GridTable(pops, times, np.array([[1000.0, 1100.0, 1200.0]]), name="LDI"),
        "EDU": GridTable(pops, times, np.array([[5.0, 5.5, 6.0]]), name="EDU"),
        "HIV": GridTable(pops, times, np.array([[0.01, 0.02, 0.03]]), name="HIV"),
    }
    model = ProcessModel(
        Link("log10"),
        GbdNonlinearCovariate(),
        NoSystematic(),
        SmoothingModel(identity_basis(), WhiteNoise(0.0)),
        pops,
        times,
    )
    params = {"beta1": -0.2, "beta2": -0.1, "beta3": 1.0, "beta4": 2.0}
    eta = evaluate_eta(model, params, covs, np.zeros((1, 3)))
    expected = np.exp(-0.2 * np.log([1000, 1100, 1200.0]) - 0.1 * np.array([5, 5.5, 6.0]) + 1.0)
    expected += 2.0 * np.array([0.01, 0.02, 0.03])
    np.testing.assert_allclose(np.log10(eta[0]), expected, atol=1e-12)


def test_missing_covariate_cell_names_location():
    times = np.arange(3.0)
    pops = ("A",)
    table = GridTable(pops, times, np.array([[1.0, np.nan, 3.0]]), name="X")
    model = ProcessModel(
        Link("identity"),
        LinearCovariate(("X",)),
        NoSystematic(),
        SmoothingModel(identity_basis(), WhiteNoise(0.0)),
        pops,
        times,
    )
    params = {"beta0": 0.0, "beta": np.array([1.0])}
    with pytest.raises(CoverageError, match=r"population=A, time=1"):
        evaluate_eta(model, params, {"X": table}, np.zeros((1, 3)))


def test_epsilon_shape_checked():
    model = empty_model()
    with pytest.raises(GridError):
        evaluate_eta(model, {}, None, np.zeros((2, 9)))


# -------------------------------------------------------------- trapezoid


def trapezoid_model(times):
    return ProcessModel(
        Link("identity"),
        NoCovariate(),
        Trapezoid(),
        SmoothingModel(identity_basis(), WhiteNoise(0.0)),
        ("A",),
        times,
    )


TRAP_PARAMS = {"xi": 2.0, "gamma0": 3.0, "lambda1": 2.0, "lambda2": 4.0, "lambda3": 1.0}


def trap_value(t):
    model = trapezoid_model(np.array([t]))
    return float(evaluate_eta(model, TRAP_PARAMS, None, np.zeros((1, 1)))[0, 0])


def test_trapezoid_zero_outside_support():
    assert trap_value(2.9) == 0.0
    assert trap_value(10.1) == 0.0


def test_trapezoid_plateau():
    for t in (5.0, 7.0, 9.0):
        assert trap_value(t) == pytest.approx(2.0)


def test_trapezoid_continuity_at_breakpoints():
    for b in (3.0, 5.0, 9.0, 10.0):
        left, right = trap_value(b - 1e-9), trap_value(b + 1e-9)
        assert abs(left - right) < 1e-6


# ------------------------------------------------------------ transitions


def test_transition_zero_rate_is_identity():
    assert fpem_transition_step(0.3, 0.9, 0.0) == pytest.approx(float(logit(0.3)))


def test_transition_scalar_case():
    # asymptote 1 collapses the step to a logit-scale shift by the rate
    got = fpem_transition_step(0.5, 1.0, 0.1)
    assert expit(got) == pytest.approx(0.52498, abs=1e-4)
    assert got == pytest.approx(float(logit(expit(logit(0.5) + 0.1))))


def test_transition_monotone_convergence():
    eta = 0.02
    asymptote, rate = 0.8, 0.15
    previous = eta
    for _ in range(500):
        eta = float(expit(fpem_transition_step(eta, asymptote, rate)))
        assert eta >= previous - 1e-12
        assert eta <= asymptote + 1e-9
        previous = eta
    assert eta == pytest.approx(asymptote, abs=1e-3)


def test_transition_monotone_in_previous_value():
    values = [fpem_transition_step(p, 0.9, 0.2) for p in np.linspace(0.01, 0.99, 50)]
    assert np.all(np.diff(values) > 0)


def test_transition_domain_errors():
    with pytest.raises(ParameterError):
        fpem_transition_step(0.0, 0.9, 0.1)
    with pytest.raises(ParameterError):
        fpem_transition_step(1.2, 0.9, 0.1)
    with pytest.raises(ParameterError):
        fpem_transition_step(0.5, 0.0, 0.1)


def test_transition_inverse_round_trip():
    for eta_prev in (0.05, 0.4, 0.85, 0.95):
        out = fpem_transition_step(eta_prev, 0.9, 0.3)
        back = inverse_fpem_transition_step(out, 0.9, 0.3)
        assert back == pytest.approx(eta_prev, abs=1e-12)


def fpem_model(times, pops=("A",)):
    return ProcessModel(
        Link("logit"),
        NoCovariate(),
        LogisticTransition(),
        SmoothingModel(identity_basis(), AR1(0.0, 0.5)),
        pops,
        times,
    )


def test_fpem_path_monotone_with_zero_noise():
    times = np.arange(1990.0, 2021.0)
    model = fpem_model(times)
    params = {"Ptilde": 0.85, "omega": 0.2, "Omega": float(logit(0.1)), "t_star": 1990.0}
    eta = evaluate_eta(model, params, None, np.zeros((1, times.size)))[0]
    assert np.all(np.diff(eta) >= -1e-12)
    assert np.all(eta <= 0.85 + 1e-9)


def test_fpem_fixed_point_above_asymptote():
    times = np.arange(2000.0, 2006.0)
    model = fpem_model(times)
    params = {"Ptilde": 0.5, "omega": 0.2, "Omega": float(logit(0.9)), "t_star": 2000.0}
    eta = evaluate_eta(model, params, None, np.zeros((1, times.size)))[0]
    np.testing.assert_allclose(eta, 0.9, atol=1e-12)


def test_fpem_backward_recursion_consistent():
    # the defining identity holds at every step, including before the
    # reference year where the recursion is inverted
    times = np.arange(2000.0, 2011.0)
    model = fpem_model(times)
    params = {"Ptilde": 0.8, "omega": 0.25, "Omega": float(logit(0.35)), "t_star": 2005.0}
    rng = np.random.default_rng(1)
    eps = 0.05 * rng.standard_normal((1, times.size))
    eta = evaluate_eta(model, params, None, eps)[0]
    for j in range(1, times.size):
        g3 = fpem_transition_step(eta[j - 1], 0.8, 0.25)
        assert float(logit(eta[j])) == pytest.approx(g3 + eps[0, j], abs=1e-9)
    assert float(logit(eta[5])) == pytest.approx(float(logit(0.35)) + eps[0, 5], abs=1e-12)


# ------------------------------------------------------------- simulation


def test_simulate_deterministic():
    model = empty_model(smoother=SmoothingModel(identity_basis(), AR1(0.3, 0.6)))
    kernels = [AR1(0.3, 0.6)] * 2
    a = simulate(model, {}, None, kernels, seed=5)
    b = simulate(model, {}, None, kernels, seed=5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_simulate_zero_variance_is_deterministic_grid():
    model = empty_model(link="log")
    kernels = [WhiteNoise(0.0)] * 2
    eta, eps, delta = simulate(model, {}, None, kernels, seed=9)
    np.testing.assert_array_equal(eps, np.zeros((2, 10)))
    np.testing.assert_allclose(eta, 1.0)  # exp(0)


# ------------------------------------------------------------- projection


def linear_tail_state(model, n_draws=400, seed=0):
    """Synthetic fitted state whose coefficient draws end on an exact
    linear stretch (zero trailing second difference)."""
    rng = np.random.default_rng(seed)
    K = model.n_coefficients()
    C = model.n_populations
    T = model.times.size
    delta = np.empty((n_draws, C, K))
    for j in range(n_draws):
        for c in range(C):
            _, d = sample(model.smoother, model.times, rng_seed=rng.integers(2 ** 32))
            d = d.copy()
            d[-1] = 2 * d[-2] - d[-3]
            delta[j, c] = d
    eta = np.ones((n_draws, C, T))
    return FittedState(model.populations, model.times, delta, eta)


def test_projection_times_and_empty_projection():
    times = np.arange(2000.0, 2011.0)
    np.testing.assert_allclose(projection_times(times, 2013.0), [2011.0, 2012.0, 2013.0])
    assert projection_times(times, 2010.0).size == 0
    model = empty_model(times=times)
    state = FittedState(("A", "B"), times, np.zeros((3, 2, 11)), np.ones((3, 2, 11)))
    result = project_default(model, state, 2010.0, n_draws=3, seed=0)
    assert result.eta.shape == (3, 2, 0)


def test_default_projection_deterministic_with_zero_variance():
    times = np.arange(5.0)
    model = empty_model(populations=("A",), times=times, link="identity")
    state = FittedState(("A",), times, np.zeros((1, 1, 5)), np.zeros((1, 1, 5)))
    result = project_default(model, state, 8.0, n_draws=1, seed=3)
    np.testing.assert_allclose(result.eta, 0.0, atol=1e-12)


def test_default_projection_r2_continues_trend():
    sigma2 = 0.0009
    n = 1000
    model = b3_like_model(sigma2=sigma2)
    state = linear_tail_state(model, n_draws=n, seed=2)
    result = project_default(model, state, 26.0, n_draws=n, seed=7)
    # trailing linear tail: the mean coefficient path stays linear, with a
    # per-horizon MC tolerance from the RW(2) variance growth
    mean_path = result.delta[:, 0, :].mean(axis=0)
    K = model.n_coefficients()
    slope = mean_path[K - 1] - mean_path[K - 2]
    for h in range(K, mean_path.size):
        steps = h - K + 1
        sd_h = np.sqrt(sigma2 * sum(j ** 2 for j in range(1, steps + 1)))
        expected = mean_path[K - 1] + slope * steps
        assert mean_path[h] == pytest.approx(expected, abs=4 * sd_h / np.sqrt(n) + 1e-9)


def test_pooled_requires_b3_shape_and_valid_weight():
    model = empty_model(populations=("A",))
    state = FittedState(("A",), model.times, np.zeros((1, 1, 10)), np.zeros((1, 1, 10)))
    with pytest.raises(ParameterError, match="spline"):
        project_pooled(model, state, 12.0, W=0.5, G=0.0, V=0.1, n_draws=1, seed=0)
    b3 = b3_like_model()
    b3_state = linear_tail_state(b3, n_draws=2, seed=1)
    with pytest.raises(ParameterError, match="W"):
        project_pooled(b3, b3_state, 24.0, W=1.5, G=0.0, V=0.1, n_draws=2, seed=0)


def test_pooled_w0_matches_default_projection():
    sigma2 = 0.0025
    model = b3_like_model(sigma2=sigma2)
    state = linear_tail_state(model, n_draws=2000, seed=4)
    default = project_default(model, state, 26.0, n_draws=2000, seed=11)
    pooled = project_pooled(model, state, 26.0, W=0.0, G=5.0, V=9.0, n_draws=2000, seed=12)
    # same distribution: compare log-eta quantiles within MC tolerance
    for q in (0.1, 0.5, 0.9):
        qa = np.quantile(np.log(default.eta[:, 0, :]), q, axis=0)
        qb = np.quantile(np.log(pooled.eta[:, 0, :]), q, axis=0)
        np.testing.assert_allclose(qa, qb, atol=4 * np.sqrt(sigma2))


def test_pooled_w1_draws_from_global():
    model = b3_like_model(sigma2=0.04)
    state = linear_tail_state(model, n_draws=3000, seed=5)
    G, V = 0.03, 0.0016
    result = project_pooled(model, state, 26.0, W=1.0, G=G, V=V, n_draws=3000, seed=13)
    K = model.n_coefficients()
    second = np.diff(result.delta[:, 0, K - 2:], n=2, axis=1)
    n = second.size
    assert second.mean() == pytest.approx(G, abs=3 * np.sqrt(V / n) + 1e-4)
    assert second.var() == pytest.approx(V, rel=0.1)


def test_pooled_theta_fixed_point():
    # W = 0.5 with V equal to the fitted variance keeps Theta constant:
    # every projected second difference then has the same variance
    sigma2 = 0.01
    model = b3_like_model(sigma2=sigma2)
    state = linear_tail_state(model, n_draws=4000, seed=6)
    result = project_pooled(model, state, 26.0, W=0.5, G=0.0, V=sigma2, n_draws=4000, seed=14)
    K = model.n_coefficients()
    second = np.diff(result.delta[:, 0, K - 2:], n=2, axis=1)
    for h in range(second.shape[1]):
        assert second[:, h].var() == pytest.approx(sigma2, rel=0.15)


def test_projection_agrees_with_joint_evaluation():
    # drawing the observation window from the prior and projecting forward
    # is distributionally the same as sampling the extended model jointly,
    # provided both share the same anchoring sets
    from tmmp.basis import extend_basis
    from tmmp.smoothing import ref, sample as sample_smoother, sum_range

    times = np.arange(16.0)
    proj = np.arange(16.0, 21.0)
    n = 4000
    for smoother, label in [
        (SmoothingModel(identity_basis(), AR1(0.25, 0.7)), "stationary"),
        (
            SmoothingModel(
                bspline_basis(3, 2.5), WhiteNoise(0.04), 2, (ref(4), sum_range(2, 8))
            ),
            "twice differenced",
        ),
    ]:
        model = ProcessModel(
            Link("identity"), NoCovariate(), NoSystematic(), smoother, ("A",), times
        )
        K = model.n_coefficients()
        delta = np.empty((n, 1, K))
        for j in range(n):
            _, delta[j, 0] = sample_smoother(smoother, times, rng_seed=10_000 + j)
        state = FittedState(("A",), times, delta, np.zeros((n, 1, times.size)))
        result = project_default(model, state, 20.0, n_draws=n, seed=77)
        joint = np.empty((n, proj.size))
        Bstar = extend_basis(smoother.basis, times, proj)
        for j in range(n):
            _, d_joint = sample_smoother(
                smoother, np.concatenate([times, proj]), rng_seed=50_000 + j
            )
            joint[j] = Bstar[times.size:] @ d_joint
        eps_proj = result.eta[:, 0, :]  # identity link, no other components
        for h in range(proj.size):
            a, b = eps_proj[:, h], joint[:, h]
            se_mean = np.sqrt(a.var() / n + b.var() / n)
            assert abs(a.mean() - b.mean()) <= 3 * se_mean + 1e-12, (label, h)
            se_var = np.sqrt(2.0 / n) * max(a.var(), b.var())
            assert abs(a.var() - b.var()) <= 3 * se_var, (label, h)


def test_pooled_variance_ordering():
    # pooling toward a tighter global variance cannot widen projections
    sigma2 = 0.01
    model = b3_like_model(sigma2=sigma2)
    state = linear_tail_state(model, n_draws=3000, seed=8)
    default = project_default(model, state, 26.0, n_draws=3000, seed=15)
    pooled = project_pooled(model, state, 26.0, W=0.3, G=0.0, V=0.5 * sigma2, n_draws=3000, seed=16)
    var_default = np.log(default.eta[:, 0, :]).var(axis=0)
    var_pooled = np.log(pooled.eta[:, 0, :]).var(axis=0)
    assert np.all(var_pooled <= var_default * 1.05)
