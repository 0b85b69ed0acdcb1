"""Transformed-normal observation likelihoods."""

import numpy as np
import pytest
from scipy.stats import norm

from tmmp.datamodel import DataModelSpec, Observation, log_likelihood
from tmmp.errors import CoverageError, ParameterError
from tmmp.process import Link

POPS = ("A", "B")
TIMES = np.arange(2000.0, 2005.0)


def eta_grid(fn):
    return np.array([[fn(p, t) for t in TIMES] for p in POPS])


def test_zero_residual_contribution():
    spec = DataModelSpec(Link("log"), nonsampling_variance={"survey": 0.02})
    eta = eta_grid(lambda p, t: 3.0)
    obs = [Observation("A", 2001.0, 3.0, 0.01, source="survey")]
    got = log_likelihood(spec, obs, eta, POPS, TIMES)
    assert got == pytest.approx(-0.5 * np.log(2 * np.pi * 0.03))


def test_two_observations_hand_sum():
    spec = DataModelSpec(Link("logit"), bias={"mics": 0.05})
    eta = eta_grid(lambda p, t: 0.4 if p == "A" else 0.6)
    obs = [
        Observation("A", 2000.0, 0.35, 0.02, source="dhs"),
        Observation("B", 2003.0, 0.65, 0.03, source="mics"),
    ]
    link = Link("logit")
    expected = norm.logpdf(link.apply(0.35), link.apply(0.4), np.sqrt(0.02))
    expected += norm.logpdf(link.apply(0.65), link.apply(0.6) + 0.05, np.sqrt(0.03))
    assert log_likelihood(spec, obs, eta, POPS, TIMES) == pytest.approx(float(expected), abs=1e-12)


def test_log10_and_log_share_argmax():
    obs_value = 2.5
    candidates = np.linspace(1.5, 3.5, 401)

    def best(trans):
        spec = DataModelSpec(Link(trans))
        scores = []
        for candidate in candidates:
            eta = eta_grid(lambda p, t: candidate)
            scores.append(
                log_likelihood(spec, [Observation("A", 2000.0, obs_value, 0.01)], eta, POPS, TIMES)
            )
        return candidates[int(np.argmax(scores))]

    assert best("log") == best("log10") == pytest.approx(obs_value, abs=0.005)


def test_additivity_and_permutation_invariance():
    spec = DataModelSpec(Link("identity"))
    eta = eta_grid(lambda p, t: 1.0 + 0.1 * (t - 2000.0))
    rng = np.random.default_rng(0)
    obs = [
        Observation(rng.choice(POPS), float(rng.choice(TIMES)), rng.normal(1.2, 0.3), 0.05)
        for _ in range(12)
    ]
    total = log_likelihood(spec, obs, eta, POPS, TIMES)
    parts = sum(log_likelihood(spec, [o], eta, POPS, TIMES) for o in obs)
    assert total == pytest.approx(parts, rel=1e-12)
    shuffled = list(obs)
    rng.shuffle(shuffled)
    assert log_likelihood(spec, shuffled, eta, POPS, TIMES) == pytest.approx(total, rel=1e-12)


def test_extra_variance_reduces_sensitivity():
    # gradient of the log likelihood in eta shrinks as omega^2 grows
    def gradient(omega2):
        spec = DataModelSpec(Link("identity"), nonsampling_variance={"s": omega2})
        obs = [Observation("A", 2000.0, 1.5, 0.04, source="s")]
        h = 1e-6
        up = log_likelihood(spec, obs, eta_grid(lambda p, t: 1.0 + h), POPS, TIMES)
        down = log_likelihood(spec, obs, eta_grid(lambda p, t: 1.0 - h), POPS, TIMES)
        return abs(up - down) / (2 * h)

    grads = [gradient(w) for w in (0.0, 0.05, 0.2, 1.0)]
    assert np.all(np.diff(grads) < 0)


def test_nonsampling_override():
    spec = DataModelSpec(Link("identity"), nonsampling_variance={"s": 0.5})
    obs = [Observation("A", 2000.0, 1.0, 0.04, source="s")]
    eta = eta_grid(lambda p, t: 1.0)
    base = log_likelihood(spec, obs, eta, POPS, TIMES)
    overridden = log_likelihood(spec, obs, eta, POPS, TIMES, nonsampling={"s": 0.01})
    assert overridden == pytest.approx(-0.5 * np.log(2 * np.pi * 0.05))
    assert base == pytest.approx(-0.5 * np.log(2 * np.pi * 0.54))


def test_coverage_and_domain_errors():
    spec = DataModelSpec(Link("logit"))
    eta = eta_grid(lambda p, t: 0.5)
    with pytest.raises(CoverageError):
        log_likelihood(spec, [Observation("A", 1950.0, 0.4, 0.01)], eta, POPS, TIMES)
    with pytest.raises(CoverageError):
        log_likelihood(spec, [Observation("Z", 2000.0, 0.4, 0.01)], eta, POPS, TIMES)
    with pytest.raises(ParameterError):
        log_likelihood(spec, [Observation("A", 2000.0, 1.5, 0.01)], eta, POPS, TIMES)
    with pytest.raises(ParameterError):
        Observation("A", 2000.0, float("nan"), 0.01)
    with pytest.raises(ParameterError):
        Observation("A", 2000.0, 0.4, -0.01)
