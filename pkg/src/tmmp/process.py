"""Process models: link + covariate + systematic + offset + smoothing.

The latent indicator ``eta`` for population c at time t satisfies

    link(eta[c, t]) = covariate + systematic + offset + smoothing

evaluated cellwise on a populations-by-times grid.  Systematic
components may be recursive in past values of ``eta`` (the logistic
transition), in which case the grid is filled forward from the
reference year and backward before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .basis import extend_basis, n_basis_functions
from .errors import CoverageError, GridError, ParameterError
from .kernels import Kernel
from .smoothing import SmoothingModel, conditional_projection, sample

__all__ = [
    "Link",
    "GridTable",
    "NoCovariate",
    "LinearCovariate",
    "PiecewiseLogCovariate",
    "GbdNonlinearCovariate",
    "PCRegressionCovariate",
    "NoSystematic",
    "LinearTrend",
    "LogisticTransition",
    "Trapezoid",
    "ProcessModel",
    "evaluate_eta",
    "fpem_transition_step",
    "inverse_fpem_transition_step",
    "simulate",
    "FittedState",
    "ProjectionResult",
    "projection_times",
    "project_default",
    "project_pooled",
]

# proportions are clamped before logits so recursive components cannot
# produce infinities during sampler exploration
_PROP_EPS = 1e-8


@dataclass(frozen=True)
class Link:
    """Invertible transformation of the indicator scale."""

    name: str

    _FORWARD = {
        "identity": lambda x: x,
        "log": np.log,
        "log10": np.log10,
        "logit": logit,
    }
    _INVERSE = {
        "identity": lambda x: x,
        "log": np.exp,
        "log10": lambda x: np.power(10.0, x),
        "logit": expit,
    }

    def __post_init__(self):
        if self.name not in self._FORWARD:
            raise ParameterError(f"unknown link '{self.name}'")

    def apply(self, eta):
        return self._FORWARD[self.name](np.asarray(eta, dtype=float))

    def inverse(self, value):
        return self._INVERSE[self.name](np.asarray(value, dtype=float))


class GridTable:
    """Values indexed by (population, time) with explicit missingness.

    Lookup is exact on populations and matches times within 1e-9, raising
    :class:`~tmmp.errors.CoverageError` that names the missing cell.
    """

    def __init__(self, populations, times, values, name: str = "value"):
        self.populations = tuple(populations)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.name = name
        if self.values.shape != (len(self.populations), self.times.size):
            raise GridError(
                f"table '{name}' has shape {self.values.shape}, expected "
                f"{(len(self.populations), self.times.size)}"
            )

    @classmethod
    def from_records(cls, records, name: str = "value"):
        """Build from (population, time, value) triples; gaps become NaN."""
        populations = sorted({str(r[0]) for r in records})
        times = np.array(sorted({float(r[1]) for r in records}))
        values = np.full((len(populations), times.size), np.nan)
        pop_idx = {p: i for i, p in enumerate(populations)}
        for pop, t, v in records:
            j = int(np.argmin(np.abs(times - float(t))))
            values[pop_idx[str(pop)], j] = float(v)
        return cls(populations, times, values, name=name)

    def lookup(self, populations, times) -> np.ndarray:
        """(len(populations), len(times)) block of values."""
        times = np.asarray(times, dtype=float)
        pop_idx = {p: i for i, p in enumerate(self.populations)}
        out = np.empty((len(populations), times.size))
        for i, pop in enumerate(populations):
            if pop not in pop_idx:
                raise CoverageError(f"table '{self.name}' has no population '{pop}'")
            row = self.values[pop_idx[pop]]
            for j, t in enumerate(times):
                hits = np.nonzero(np.abs(self.times - t) < 1e-9)[0]
                if hits.size != 1 or not np.isfinite(row[hits[0]]):
                    raise CoverageError(
                        f"missing value in table '{self.name}' at "
                        f"(population={pop}, time={t:g})"
                    )
                out[i, j] = row[hits[0]]
        return out


def _per_population(params: dict, key: str, populations) -> np.ndarray:
    """Parameter as a (C,) vector, broadcasting scalars."""
    if key not in params:
        raise ParameterError(f"missing parameter '{key}'")
    value = np.asarray(params[key], dtype=float)
    if value.ndim == 0:
        return np.full(len(populations), float(value))
    if value.shape != (len(populations),):
        raise ParameterError(
            f"parameter '{key}' has shape {value.shape}, expected scalar or ({len(populations)},)"
        )
    return value


def _scalar(params: dict, key: str) -> float:
    if key not in params:
        raise ParameterError(f"missing parameter '{key}'")
    value = np.asarray(params[key], dtype=float)
    if value.ndim != 0:
        raise ParameterError(f"parameter '{key}' must be a scalar")
    return float(value)


def _covariate(covariates, name, populations, times):
    if covariates is None or name not in covariates:
        raise CoverageError(f"no covariate table named '{name}'")
    return covariates[name].lookup(populations, times)


# ------------------------------------------------------------- covariates


@dataclass(frozen=True)
class NoCovariate:
    parameter_roles: tuple = ()

    def linkscale_values(self, params, covariates, populations, times, time_indices=None):
        return np.zeros((len(populations), len(times)))


@dataclass(frozen=True)
class LinearCovariate:
    """Population intercept plus shared slopes: ``beta0[c] + sum_k X_k * beta[k]``."""

    covariates: tuple

    parameter_roles = (("beta0", "population"), ("beta", "vector"))

    def linkscale_values(self, params, covariates, populations, times, time_indices=None):
        beta0 = _per_population(params, "beta0", populations)
        beta = np.atleast_1d(np.asarray(params["beta"], dtype=float))
        if beta.shape != (len(self.covariates),):
            raise ParameterError(
                f"'beta' must have one slope per covariate ({len(self.covariates)})"
            )
        out = np.tile(beta0[:, None], (1, len(times)))
        for k, name in enumerate(self.covariates):
            out += beta[k] * _covariate(covariates, name, populations, times)
        return out


@dataclass(frozen=True)
class PiecewiseLogCovariate:
    """Hinge on the log of one covariate above a cutoff.

    ``beta0[c] + beta1 * (log(X) - log(beta2)) * 1[X > beta2]``; continuous
    in X at the cutoff.
    """

    covariate: str

    parameter_roles = (("beta0", "population"), ("beta1", "shared"), ("beta2", "shared"))

    def linkscale_values(self, params, covariates, populations, times, time_indices=None):
        beta0 = _per_population(params, "beta0", populations)
        beta1 = _scalar(params, "beta1")
        beta2 = _scalar(params, "beta2")
        if beta2 <= 0:
            raise ParameterError("piecewise cutoff 'beta2' must be positive")
        X = _covariate(covariates, self.covariate, populations, times)
        hinge = np.where(X > beta2, np.log(np.maximum(X, beta2)) - np.log(beta2), 0.0)
        return beta0[:, None] + beta1 * hinge


@dataclass(frozen=True)
class GbdNonlinearCovariate:
    """Exponentiated regression on income and education plus an additive
    HIV term: ``exp(b1[c] log X_ldi + b2[c] X_edu + b3[c]) + b4[c] X_hiv``."""

    ldi: str = "LDI"
    edu: str = "EDU"
    hiv: str = "HIV"

    parameter_roles = (
        ("beta1", "population"),
        ("beta2", "population"),
        ("beta3", "population"),
        ("beta4", "population"),
    )

    def linkscale_values(self, params, covariates, populations, times, time_indices=None):
        b1 = _per_population(params, "beta1", populations)[:, None]
        b2 = _per_population(params, "beta2", populations)[:, None]
        b3 = _per_population(params, "beta3", populations)[:, None]
        b4 = _per_population(params, "beta4", populations)[:, None]
        ldi = _covariate(covariates, self.ldi, populations, times)
        edu = _covariate(covariates, self.edu, populations, times)
        hiv = _covariate(covariates, self.hiv, populations, times)
        if np.any(ldi <= 0):
            raise ParameterError(f"covariate '{self.ldi}' must be positive for its log")
        return np.exp(b1 * np.log(ldi) + b2 * edu + b3) + b4 * hiv


@dataclass(frozen=True)
class PCRegressionCovariate:
    """Coefficients varying by population and time over fixed component
    loadings: ``sum_k X_k[c, t] * beta[c, t, k]``."""

    covariates: tuple

    parameter_roles = (("beta", "population_time_vector"),)

    def linkscale_values(self, params, covariates, populations, times, time_indices=None):
        beta = np.asarray(params["beta"], dtype=float)
        if beta.ndim != 3 or beta.shape[0] != len(populations) or beta.shape[2] != len(self.covariates):
            raise ParameterError(
                "'beta' must have shape (populations, times, components)"
            )
        if time_indices is None:
            if beta.shape[1] != len(times):
                raise ParameterError("'beta' time axis does not match the grid")
            time_indices = np.arange(len(times))
        out = np.zeros((len(populations), len(times)))
        for k, name in enumerate(self.covariates):
            X = _covariate(covariates, name, populations, times)
            out += X * beta[:, time_indices, k]
        return out


# ------------------------------------------------------------- systematic


@dataclass(frozen=True)
class NoSystematic:
    recursive = False
    parameter_roles: tuple = ()

    def linkscale_values(self, params, populations, times):
        return np.zeros((len(populations), len(times)))


@dataclass(frozen=True)
class LinearTrend:
    """``alpha0[c] + alpha1[c] * (t - t_star[c])``."""

    recursive = False
    parameter_roles = (
        ("alpha0", "population"),
        ("alpha1", "population"),
        ("t_star", "population"),
    )

    def linkscale_values(self, params, populations, times):
        alpha0 = _per_population(params, "alpha0", populations)[:, None]
        alpha1 = _per_population(params, "alpha1", populations)[:, None]
        t_star = _per_population(params, "t_star", populations)[:, None]
        times = np.asarray(times, dtype=float)[None, :]
        return alpha0 + alpha1 * (times - t_star)


@dataclass(frozen=True)
class LogisticTransition:
    """Logistic-growth transition evaluated recursively from a reference year.

    At the reference year the component contributes the level parameter;
    afterwards it contributes the transition step applied to the previous
    eta, and before it the recursion is inverted so the whole grid is
    defined.
    """

    recursive = True
    parameter_roles = (
        ("Ptilde", "population"),
        ("omega", "population"),
        ("Omega", "population"),
        ("t_star", "shared"),
    )


@dataclass(frozen=True)
class Trapezoid:
    """Piecewise-linear bump: rise over ``lambda1``, plateau at ``xi`` for
    ``lambda2``, fall over ``lambda3``, zero outside."""

    recursive = False
    parameter_roles = (
        ("xi", "population"),
        ("gamma0", "population"),
        ("lambda1", "population"),
        ("lambda2", "population"),
        ("lambda3", "population"),
    )

    def linkscale_values(self, params, populations, times):
        xi = _per_population(params, "xi", populations)[:, None]
        g0 = _per_population(params, "gamma0", populations)[:, None]
        l1 = _per_population(params, "lambda1", populations)[:, None]
        l2 = _per_population(params, "lambda2", populations)[:, None]
        l3 = _per_population(params, "lambda3", populations)[:, None]
        if np.any(l1 <= 0) or np.any(l2 < 0) or np.any(l3 <= 0):
            raise ParameterError("trapezoid durations must be positive")
        t = np.asarray(times, dtype=float)[None, :]
        g1 = g0 + l1
        g2 = g1 + l2
        g3 = g2 + l3
        rise = xi * (t - g0) / l1
        fall = xi - xi * (t - g2) / l3
        out = np.zeros(np.broadcast_shapes(t.shape, xi.shape))
        out = np.where((t > g0) & (t < g1), rise, out)
        out = np.where((t >= g1) & (t <= g2), xi * np.ones_like(out), out)
        out = np.where((t > g2) & (t < g3), fall, out)
        return out


def fpem_transition_step(eta_prev: float, asymptote: float, rate: float) -> float:
    """Logit-scale logistic-growth update from the previous proportion.

    Below the asymptote the proportion moves along a logistic curve
    toward it at the given rate; at or above the asymptote the value is
    carried over unchanged.  The output is strictly increasing in
    ``eta_prev`` and a zero rate returns ``logit(eta_prev)`` exactly.
    """
    if not (0.0 < eta_prev < 1.0):
        raise ParameterError(f"previous proportion {eta_prev} outside (0, 1)")
    if not (0.0 < asymptote <= 1.0):
        raise ParameterError("asymptote must lie in (0, 1]")
    if rate < 0:
        raise ParameterError("transition rate must be nonnegative")
    if eta_prev >= asymptote or rate == 0:
        # a zero rate fixes the point exactly (no round-trip through the
        # asymptote-relative scale)
        return float(logit(eta_prev))
    inner = logit(eta_prev / asymptote) + rate
    return float(logit(asymptote * expit(inner)))


def inverse_fpem_transition_step(value: float, asymptote: float, rate: float) -> float:
    """Previous proportion given the transition output (algebraic inverse)."""
    y = float(expit(value))
    if y >= asymptote or rate == 0:
        return y
    return float(asymptote * expit(logit(y / asymptote) - rate))


# ------------------------------------------------------------ the model


@dataclass(frozen=True)
class ProcessModel:
    """Composed process model over a populations-by-times grid."""

    link: Link
    covariate: object
    systematic: object
    smoother: SmoothingModel
    populations: tuple
    times: np.ndarray
    offsets: GridTable | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "populations", tuple(self.populations))
        if self.times.ndim != 1 or self.times.size == 0:
            raise GridError("model needs a nonempty 1-d time grid")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise GridError("model time grid must be strictly increasing")

    @property
    def n_populations(self) -> int:
        return len(self.populations)

    def n_coefficients(self) -> int:
        return n_basis_functions(self.smoother.basis, self.times)


def _fixed_linkscale(model: ProcessModel, params, covariates, times, time_indices=None):
    """Covariate + offset (+ non-recursive systematic) on the link scale."""
    base = model.covariate.linkscale_values(
        params, covariates, model.populations, times, time_indices=time_indices
    )
    if not model.systematic.recursive:
        base = base + model.systematic.linkscale_values(params, model.populations, times)
    if model.offsets is not None:
        base = base + model.offsets.lookup(model.populations, times)
    return base


def _clamp_proportion(value):
    return np.clip(value, _PROP_EPS, 1.0 - _PROP_EPS)


def _recursive_eta(model: ProcessModel, params, base, epsilon, times) -> np.ndarray:
    """Fill the grid forward from the reference year and backward before it."""
    asymptote = _per_population(params, "Ptilde", model.populations)
    rate = _per_population(params, "omega", model.populations)
    level = _per_population(params, "Omega", model.populations)
    t_star = _scalar(params, "t_star")
    hits = np.nonzero(np.abs(times - t_star) < 1e-9)[0]
    if hits.size != 1:
        raise GridError(f"reference year {t_star:g} not on the time grid")
    i_star = int(hits[0])
    C, T = base.shape
    eta = np.empty((C, T))
    for c in range(C):
        eta[c, i_star] = model.link.inverse(level[c] + base[c, i_star] + epsilon[c, i_star])
        for j in range(i_star + 1, T):
            prev = _clamp_proportion(eta[c, j - 1])
            g3 = fpem_transition_step(float(prev), asymptote[c], rate[c])
            eta[c, j] = model.link.inverse(g3 + base[c, j] + epsilon[c, j])
        for j in range(i_star - 1, -1, -1):
            target = model.link.apply(_clamp_proportion(eta[c, j + 1]))
            g3 = float(target) - base[c, j + 1] - epsilon[c, j + 1]
            eta[c, j] = inverse_fpem_transition_step(g3, asymptote[c], rate[c])
    return eta


def evaluate_eta(model: ProcessModel, params, covariates, epsilon) -> np.ndarray:
    """Latent indicator over the model grid given component parameters
    and smoothing deviations ``epsilon`` (populations x times)."""
    epsilon = np.asarray(epsilon, dtype=float)
    expected = (model.n_populations, model.times.size)
    if epsilon.shape != expected:
        raise GridError(f"epsilon has shape {epsilon.shape}, expected {expected}")
    base = _fixed_linkscale(model, params, covariates, model.times)
    if model.systematic.recursive:
        eta = _recursive_eta(model, params, base, epsilon, model.times)
    else:
        eta = model.link.inverse(base + epsilon)
    if not np.all(np.isfinite(eta)):
        raise ParameterError("evaluation produced non-finite eta values")
    return eta


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def simulate(model: ProcessModel, params, covariates, kernels, seed):
    """Draw smoothing deviations and evaluate eta.

    ``kernels`` is one kernel per population (smoothing variances are
    usually population specific).  Returns ``(eta, epsilon, delta)``.
    """
    children = _seed_sequence(seed).spawn(model.n_populations)
    K = model.n_coefficients()
    epsilon = np.empty((model.n_populations, model.times.size))
    delta = np.empty((model.n_populations, K))
    for c in range(model.n_populations):
        smoother = model.smoother.with_kernel(kernels[c])
        epsilon[c], delta[c] = sample(smoother, model.times, children[c])
    return evaluate_eta(model, params, covariates, epsilon), epsilon, delta


# ------------------------------------------------------------ projection


@dataclass
class FittedState:
    """Posterior (or synthetic) draws needed to project a model forward."""

    populations: tuple
    times: np.ndarray
    delta: np.ndarray  # (n_draws, C, K)
    eta: np.ndarray  # (n_draws, C, T)
    params: dict = field(default_factory=dict)  # name -> (n,) or (n, C)
    kernels: list | None = None  # per draw, per population

    @property
    def n_draws(self) -> int:
        return self.delta.shape[0]

    def params_for(self, j: int) -> dict:
        out = {}
        for name, draws in self.params.items():
            arr = np.asarray(draws)
            out[name] = arr[j] if arr.ndim >= 1 and arr.shape[0] == self.n_draws else arr
        return out

    def kernel_for(self, j: int, c: int, default: Kernel) -> Kernel:
        if self.kernels is None:
            return default
        return self.kernels[j][c]


@dataclass
class ProjectionResult:
    times: np.ndarray  # projection window
    eta: np.ndarray  # (n_draws, C, P)
    delta: np.ndarray  # (n_draws, C, K_star) full coefficient paths


def projection_times(times, t_end: float) -> np.ndarray:
    """Continue the trailing grid spacing up to and including ``t_end``."""
    times = np.asarray(times, dtype=float)
    spacing = times[-1] - times[-2] if times.size >= 2 else 1.0
    if t_end <= times[-1] + 1e-9:
        return np.zeros(0)
    n = int(np.floor((t_end - times[-1]) / spacing + 1e-9))
    return times[-1] + spacing * np.arange(1, n + 1)


def _draw_indices(state: FittedState, n_draws: int, rng) -> np.ndarray:
    if n_draws == state.n_draws:
        return np.arange(n_draws)
    return rng.integers(0, state.n_draws, size=n_draws)


def _sample_gaussian(mean, cov, rng):
    w, V = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    return mean + V @ (np.sqrt(w) * rng.standard_normal(len(mean)))


def _eta_on_projection(model, params, covariates, times_proj, eps_proj, eta_last):
    """Per-population eta over the projection window.

    Non-recursive components are evaluated directly (the differenced
    projection identity telescopes back to the level identity); the
    logistic transition continues its recursion from the last estimated
    eta.
    """
    if not model.systematic.recursive:
        base = _fixed_linkscale(model, params, covariates, times_proj)
        return model.link.inverse(base + eps_proj)
    asymptote = _per_population(params, "Ptilde", model.populations)
    rate = _per_population(params, "omega", model.populations)
    base = _fixed_linkscale(model, params, covariates, times_proj)
    C, P = eps_proj.shape
    eta = np.empty((C, P))
    for c in range(C):
        prev = _clamp_proportion(eta_last[c])
        for j in range(P):
            g3 = fpem_transition_step(float(prev), asymptote[c], rate[c])
            eta[c, j] = model.link.inverse(g3 + base[c, j] + eps_proj[c, j])
            prev = _clamp_proportion(eta[c, j])
    return eta


def project_default(model: ProcessModel, state: FittedState, t_end: float,
                    n_draws: int, seed, covariates=None) -> ProjectionResult:
    """Project with the estimation model itself: extend the basis, draw
    future (differenced) coefficients from their exact conditional given
    the fitted ones, rebuild the smoothing term, and evaluate eta."""
    times_proj = projection_times(model.times, t_end)
    K = model.n_coefficients()
    if times_proj.size == 0:
        return ProjectionResult(times_proj, np.zeros((n_draws, model.n_populations, 0)),
                                state.delta[:n_draws].copy())
    Bstar = extend_basis(model.smoother.basis, model.times, times_proj)
    K_star = Bstar.shape[1]
    B_proj = Bstar[model.times.size:, :]
    rng = np.random.default_rng(_seed_sequence(seed))
    idx = _draw_indices(state, n_draws, rng)
    C = model.n_populations
    eta_out = np.empty((n_draws, C, times_proj.size))
    delta_out = np.empty((n_draws, C, K_star))
    for out_j, j in enumerate(idx):
        params = state.params_for(int(j))
        for c in range(C):
            kernel = state.kernel_for(int(j), c, model.smoother.kernel)
            smoother = model.smoother.with_kernel(kernel)
            mean, cov = conditional_projection(
                smoother, state.delta[j, c], K_star - K, times=model.times
            )
            delta_new = _sample_gaussian(mean, cov, rng)
            delta_out[out_j, c] = np.concatenate([state.delta[j, c], delta_new])
        eps_proj = delta_out[out_j] @ B_proj.T
        eta_out[out_j] = _eta_on_projection(
            model, params, covariates, times_proj, eps_proj, state.eta[j, :, -1]
        )
    return ProjectionResult(times_proj, eta_out, delta_out)


def project_pooled(model: ProcessModel, state: FittedState, t_end: float,
                   W: float, G: float, V: float, n_draws: int, seed,
                   covariates=None) -> ProjectionResult:
    """Project by pooling each population's recent second difference with
    a global mean and variance.

    New coefficients follow ``delta[k+1] = 2 delta[k] - delta[k-1] + gamma``
    with ``gamma ~ N(Gamma_k, Theta_k)``, where the mean recursion starts
    from the last fitted second difference and shrinks geometrically
    toward the global value ``G``
    (``Gamma = W G + (1 - W) Gamma_prev``) and the variance recursion
    moves from the fitted smoothing variance toward ``V``.  ``W = 0``
    keeps the estimation model's own continuation; ``W = 1`` draws every
    step from the global distribution.
    """
    if not (0.0 <= W <= 1.0):
        raise ParameterError("pooling weight W must lie in [0, 1]")
    if not (np.isfinite(G) and np.isfinite(V) and V >= 0):
        raise ParameterError("pooling parameters G, V must be finite with V >= 0")
    if model.smoother.order != 2 or model.smoother.basis.is_identity:
        raise ParameterError(
            "pooled projection needs a twice-differenced spline smoother"
        )
    times_proj = projection_times(model.times, t_end)
    K = model.n_coefficients()
    if times_proj.size == 0:
        return ProjectionResult(times_proj, np.zeros((n_draws, model.n_populations, 0)),
                                state.delta[:n_draws].copy())
    Bstar = extend_basis(model.smoother.basis, model.times, times_proj)
    K_star = Bstar.shape[1]
    B_proj = Bstar[model.times.size:, :]
    rng = np.random.default_rng(_seed_sequence(seed))
    idx = _draw_indices(state, n_draws, rng)
    C = model.n_populations
    eta_out = np.empty((n_draws, C, times_proj.size))
    delta_out = np.empty((n_draws, C, K_star))
    for out_j, j in enumerate(idx):
        params = state.params_for(int(j))
        for c in range(C):
            kernel = state.kernel_for(int(j), c, model.smoother.kernel)
            path = list(state.delta[j, c])
            gamma_mean = path[-1] - 2 * path[-2] + path[-3]
            theta = kernel.variance
            for _ in range(K_star - K):
                gamma_mean = W * G + (1 - W) * gamma_mean
                theta = W * V + (1 - W) * theta
                gamma = gamma_mean + np.sqrt(theta) * rng.standard_normal()
                path.append(2 * path[-1] - path[-2] + gamma)
            delta_out[out_j, c] = path
        eps_proj = delta_out[out_j] @ B_proj.T
        eta_out[out_j] = _eta_on_projection(
            model, params, covariates, times_proj, eps_proj, state.eta[j, :, -1]
        )
    return ProjectionResult(times_proj, eta_out, delta_out)
