"""Fitting process models to observations.

Two routes:

- :func:`fit_conjugate` solves linear-Gaussian instances exactly (fixed
  non-smoothing parameters, non-recursive components, the data
  transformation equal to the model link) by joint-Gaussian conditioning
  of the smoothing coefficients on the observations.
- :func:`fit_mcmc` handles general instances with an adaptive
  random-walk Metropolis-within-Gibbs sampler: scalar parameter blocks
  with adaptive proposal scales, hierarchy internals as extra scalar
  blocks, and direct Gaussian draws for the smoothing coefficients
  whenever they are conditionally conjugate.

Both produce a :class:`FitResult` holding parameter, coefficient, and
eta draws plus split potential-scale-reduction and effective-sample-size
diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import build_basis
from .datamodel import DataModelSpec
from .errors import (
    InitializationError,
    NotConjugateError,
    ParameterError,
)
from .hierarchy import Fixed, Hierarchical, MultiplicativeTN, Prior, log_prior
from .kernels import cholesky_with_jitter, gram_matrix
from .process import (
    FittedState,
    ProcessModel,
    _fixed_linkscale,
    evaluate_eta,
)
from .smoothing import constrained_map

__all__ = [
    "EstimationSetup",
    "FitResult",
    "fit_conjugate",
    "fit_mcmc",
    "summarize",
    "split_rhat",
    "effective_sample_size",
]


@dataclass
class EstimationSetup:
    """Bindings of parameter symbols to estimation strategies.

    ``roles`` gives each symbol's shape: ``'population'`` (one value per
    population), ``'shared'`` (one scalar), or ``'vector'`` (a shared
    coefficient vector whose length comes from ``vector_lengths``).
    ``kernel_map`` names the kernel fields driven by symbols, e.g.
    ``{"variance": "sigma2_delta"}``; such symbols usually have the
    ``'population'`` role.  ``transforms`` marks symbols sampled on the
    log scale (positive parameters).
    """

    bindings: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)
    kernel_map: dict = field(default_factory=dict)
    vector_lengths: dict = field(default_factory=dict)
    transforms: dict = field(default_factory=dict)

    def transform_of(self, symbol: str) -> str:
        return self.transforms.get(symbol, "identity")

    def free_symbols(self) -> list:
        return [s for s, strat in self.bindings.items() if not isinstance(strat, Fixed)]


@dataclass
class FitResult:
    """Draws and diagnostics from a fit.

    ``params`` maps symbol to an array of shape (chains, draws) or
    (chains, draws, C); ``delta`` and ``eta`` have shape
    (chains, draws, C, K) and (chains, draws, C, T).  ``diagnostics``
    maps each scalar series name to ``(split_rhat, ess)``.
    """

    populations: tuple
    times: np.ndarray
    params: dict
    delta: np.ndarray
    eta: np.ndarray
    diagnostics: dict
    seed: int
    chains: int
    iterations: int
    warmup: int
    analytic: dict | None = None  # linkscale posterior mean/cov per population
    kernels: list | None = None  # per flattened draw, per population
    population_params: tuple = ()  # names whose trailing axis is populations

    @property
    def n_draws(self) -> int:
        return self.delta.shape[0] * self.delta.shape[1]

    def flat_params(self) -> dict:
        return {
            name: draws.reshape((-1,) + draws.shape[2:]) for name, draws in self.params.items()
        }

    def flat_delta(self) -> np.ndarray:
        return self.delta.reshape((-1,) + self.delta.shape[2:])

    def flat_eta(self) -> np.ndarray:
        return self.eta.reshape((-1,) + self.eta.shape[2:])

    def scalar_series(self) -> dict:
        """Every sampled quantity as named (chains, draws) series."""
        out = {}
        for name, draws in self.params.items():
            if draws.ndim == 2:
                out[name] = draws
            else:
                by_pop = name in self.population_params and draws.shape[2] == len(self.populations)
                for c in range(draws.shape[2]):
                    label = self.populations[c] if by_pop else str(c)
                    out[f"{name}[{label}]"] = draws[:, :, c]
        return out

    def to_state(self) -> FittedState:
        return FittedState(
            self.populations,
            self.times,
            self.flat_delta(),
            self.flat_eta(),
            params=self.flat_params(),
            kernels=self.kernels,
        )


# ------------------------------------------------------------- plumbing


class _PreparedObservations:
    """Per-population observation indices, transformed values, variances."""

    def __init__(self, model: ProcessModel, observations, datamodel: DataModelSpec,
                 nonsampling=None):
        pop_idx = {p: i for i, p in enumerate(model.populations)}
        self.by_pop = [([], [], [], []) for _ in model.populations]
        for obs in observations:
            if obs.population not in pop_idx:
                raise ParameterError(f"observation population '{obs.population}' not in model")
            hits = np.nonzero(np.abs(model.times - obs.time) < 1e-9)[0]
            if hits.size != 1:
                from .errors import CoverageError

                raise CoverageError(
                    f"observation at (population={obs.population}, time={obs.time:g}) "
                    "outside the model grid"
                )
            transformed = float(datamodel.transformation.apply(obs.value))
            if not np.isfinite(transformed):
                raise ParameterError(f"observation value {obs.value} outside transformation domain")
            var = obs.variance + datamodel.source_nonsampling(obs.source, nonsampling)
            if var <= 0:
                raise ParameterError("total observation variance must be positive")
            t_idx, y, v, b = self.by_pop[pop_idx[obs.population]]
            t_idx.append(int(hits[0]))
            y.append(transformed)
            v.append(var)
            b.append(datamodel.source_bias(obs.source))
        self.by_pop = [
            (np.array(t, dtype=int), np.array(y), np.array(v), np.array(b))
            for t, y, v, b in self.by_pop
        ]

    def loglik_gaussian(self, linkscale: np.ndarray) -> float:
        """Gaussian log likelihood when the data transformation equals the
        link (observations compare directly to the link-scale grid)."""
        total = 0.0
        for c, (t_idx, y, v, b) in enumerate(self.by_pop):
            if t_idx.size == 0:
                continue
            resid = y - (linkscale[c, t_idx] + b)
            total += float(-0.5 * np.sum(np.log(2 * np.pi * v) + resid ** 2 / v))
        return total


def _eligibility(model: ProcessModel, datamodel: DataModelSpec) -> None:
    if model.systematic.recursive:
        raise NotConjugateError(
            "recursive systematic components are nonlinear in the coefficients; use fit_mcmc"
        )
    if datamodel.transformation.name != model.link.name:
        raise NotConjugateError(
            "data transformation differs from the model link; use fit_mcmc"
        )


def _design(model: ProcessModel):
    """B @ A: free differenced coordinates -> smoothing values on the grid."""
    B = build_basis(model.smoother.basis, model.times)
    K = B.shape[1]
    A = constrained_map(model.smoother, K, times=model.times)
    return B @ A, A, K


def _gamma_cov(model: ProcessModel, kernel):
    positions = model.smoother.coefficient_positions(model.times)
    n_free = positions.size - model.smoother.order
    if kernel.variance == 0:
        return np.zeros((n_free, n_free))
    return gram_matrix(kernel, positions[:n_free])


# -------------------------------------------------------------- conjugate


def fit_conjugate(model: ProcessModel, observations, datamodel: DataModelSpec,
                  params: dict, kernels=None, covariates=None,
                  n_draws: int = 1000, seed: int = 0) -> FitResult:
    """Exact posterior for linear-Gaussian instances.

    All covariate/systematic/offset parameters and kernel
    hyperparameters are fixed; the posterior of the smoothing
    coefficients (hence eta) is Gaussian and computed in closed form,
    with ``n_draws`` exact draws attached.
    """
    _eligibility(model, datamodel)
    kernels = kernels or [model.smoother.kernel] * model.n_populations
    prepared = _PreparedObservations(model, observations, datamodel)
    BA, A, K = _design(model)
    base = _fixed_linkscale(model, params, covariates, model.times)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    C, T = base.shape
    delta = np.empty((1, n_draws, C, K))
    eta = np.empty((1, n_draws, C, T))
    analytic = {"mean": np.empty((C, T)), "cov": []}
    for c in range(C):
        prior_cov = _gamma_cov(model, kernels[c])
        t_idx, y, v, b = prepared.by_pop[c]
        if t_idx.size == 0:
            mean_g = np.zeros(prior_cov.shape[0])
            cov_g = prior_cov
        else:
            M = BA[t_idx, :]
            resid = y - b - base[c, t_idx]
            # gain form: stable for tiny observation variances and for
            # rank-deficient (constrained) priors
            cross = prior_cov @ M.T
            obs_cov = M @ cross + np.diag(v)
            w, V = np.linalg.eigh(0.5 * (obs_cov + obs_cov.T))
            keep = w > w.max() * 1e-14
            Vk, wk = V[:, keep], w[keep]
            mean_g = cross @ (Vk @ ((Vk.T @ resid) / wk))
            half = (cross @ Vk) / np.sqrt(wk)
            cov_g = prior_cov - half @ half.T
        Lg = _psd_factor(cov_g)
        z = rng.standard_normal((n_draws, Lg.shape[1]))
        gamma_draws = mean_g + z @ Lg.T
        delta[0, :, c, :] = gamma_draws @ A.T
        linkscale = base[c] + gamma_draws @ BA.T
        eta[0, :, c, :] = model.link.inverse(linkscale)
        analytic["mean"][c] = base[c] + BA @ mean_g
        analytic["cov"].append(BA @ cov_g @ BA.T)
    diagnostics = {}
    result = FitResult(
        model.populations, model.times, {}, delta, eta, diagnostics,
        seed=seed, chains=1, iterations=n_draws, warmup=0, analytic=analytic,
        kernels=[list(kernels) for _ in range(n_draws)],
    )
    fixed_params = {
        name: np.broadcast_to(np.asarray(value, dtype=float), (1, n_draws) + np.shape(value)).copy()
        for name, value in params.items()
    }
    result.params = fixed_params
    return result


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


# ------------------------------------------------------------------ MCMC


class _Block:
    """One scalar (or vector) Metropolis block with an adaptive scale."""

    def __init__(self, name, getter, setter, transform="identity", target=0.44, scale=0.1):
        self.name = name
        self.getter = getter
        self.setter = setter
        self.transform = transform
        self.target = target
        self.log_scale = np.log(scale)
        self.accepted = 0
        self.attempts = 0
        self.batches = 0

    def propose(self, rng):
        x = self.getter()
        if self.transform == "log":
            return float(np.exp(np.log(x) + np.exp(self.log_scale) * rng.standard_normal()))
        return float(x + np.exp(self.log_scale) * rng.standard_normal())

    def jacobian(self, x) -> float:
        return float(np.log(x)) if self.transform == "log" else 0.0

    def adapt(self):
        self.batches += 1
        rate = self.accepted / max(self.attempts, 1)
        step = min(0.25, self.batches ** -0.5)
        self.log_scale += step * (rate - self.target)
        self.accepted = 0
        self.attempts = 0


class _Sampler:
    """State and log-posterior plumbing for one chain."""

    def __init__(self, model, prepared, datamodel, setup, covariates, rng):
        self.model = model
        self.prepared = prepared
        self.datamodel = datamodel
        self.setup = setup
        self.covariates = covariates
        self.rng = rng
        self.C = model.n_populations
        self.BA, self.A, self.K = _design(model)
        self.n_free = self.A.shape[1]
        self.direct = (
            not model.systematic.recursive
            and datamodel.transformation.name == model.link.name
        )
        self.state = {}
        self.hyper = {}
        self.gamma = np.zeros((self.C, self.n_free))
        self._chol_cache = {}
        self._init_state()
        self.blocks = self._build_blocks()

    # -- state ------------------------------------------------------------

    def _init_state(self):
        for symbol, strategy in self.setup.bindings.items():
            role = self.setup.roles.get(symbol, "shared")
            if isinstance(strategy, Fixed):
                value = strategy.value
                self.state[symbol] = (
                    np.full(self.C, value) if role == "population" else
                    np.full(self.setup.vector_lengths.get(symbol, 1), value)
                    if role == "vector" else float(value)
                )
                continue
            if isinstance(strategy, Prior):
                med = strategy.median()
                self.state[symbol] = (
                    np.full(self.C, med) if role == "population" else
                    np.full(self.setup.vector_lengths.get(symbol, 1), med)
                    if role == "vector" else float(med)
                )
                continue
            if isinstance(strategy, MultiplicativeTN):
                self.hyper[f"{symbol}.center"] = 1.0
                self.hyper[f"{symbol}.sd"] = 1.0
                self.state[symbol] = np.full(self.C, 1.0)
                continue
            if isinstance(strategy, Hierarchical):
                top = strategy.mean.median() if isinstance(strategy.mean, Prior) else float(strategy.mean)
                self.hyper[f"{symbol}.mean"] = top
                for level, entry in enumerate(strategy.level_sds):
                    if isinstance(entry, Prior):
                        self.hyper[f"{symbol}.sd{level + 1}"] = max(entry.median(), 1e-3)
                labels = strategy.group_labels(self.model.populations)
                for level in range(strategy.levels - 1):
                    for group in sorted(set(labels[level])):
                        self.hyper[f"{symbol}.group{level + 1}[{group}]"] = top
                start = np.exp(top) if strategy.on_log_scale else top
                self.state[symbol] = np.full(self.C, start)
                continue
            raise ParameterError(f"unknown strategy for '{symbol}'")

    def kernel_for(self, c: int):
        kernel = self.model.smoother.kernel
        for fld, symbol in self.setup.kernel_map.items():
            value = self.state[symbol]
            value = float(value[c]) if np.ndim(value) else float(value)
            if fld == "variance":
                kernel = kernel.scaled(value)
            else:
                kernel = type(kernel)(**{**_kernel_fields(kernel), fld: value})
        return kernel

    def params_dict(self) -> dict:
        return dict(self.state)

    # -- log posterior ----------------------------------------------------

    def _hier_hypers(self, symbol, strategy):
        hypers = {"mean": self.hyper.get(f"{symbol}.mean", 0.0)}
        for level in range(strategy.levels):
            key = f"{symbol}.sd{level + 1}"
            if key in self.hyper:
                hypers[f"sd{level + 1}"] = self.hyper[key]
        if strategy.levels > 1:
            labels = strategy.group_labels(self.model.populations)
            group_means = []
            for level in range(strategy.levels - 1):
                means = {
                    g: self.hyper[f"{symbol}.group{level + 1}[{g}]"]
                    for g in sorted(set(labels[level]))
                }
                group_means.append(means)
            hypers["group_means"] = group_means
        return hypers

    def log_prior_total(self) -> float:
        total = 0.0
        for symbol, strategy in self.setup.bindings.items():
            if isinstance(strategy, Fixed):
                continue
            value = self.state[symbol]
            if isinstance(strategy, Prior):
                total += strategy.logpdf(np.atleast_1d(value))
            elif isinstance(strategy, MultiplicativeTN):
                total += log_prior(
                    strategy, value,
                    hypers={"center": self.hyper[f"{symbol}.center"],
                            "sd": self.hyper[f"{symbol}.sd"]},
                )
                total += strategy.center_prior.logpdf(np.array([self.hyper[f"{symbol}.center"]]))
                total += strategy.sd_prior.logpdf(np.array([self.hyper[f"{symbol}.sd"]]))
            elif isinstance(strategy, Hierarchical):
                total += log_prior(
                    strategy, value, populations=self.model.populations,
                    hypers=self._hier_hypers(symbol, strategy),
                )
                if isinstance(strategy.mean, Prior):
                    total += strategy.mean.logpdf(np.array([self.hyper[f"{symbol}.mean"]]))
                for level, entry in enumerate(strategy.level_sds):
                    if isinstance(entry, Prior):
                        total += entry.logpdf(np.array([self.hyper[f"{symbol}.sd{level + 1}"]]))
            if not np.isfinite(total):
                return float(total)
        return float(total)

    def _gamma_chol(self, kernel):
        key = (type(kernel).__name__,) + tuple(
            round(float(v), 14) for v in _kernel_fields(kernel).values()
        )
        if key not in self._chol_cache:
            if len(self._chol_cache) > 256:
                self._chol_cache.clear()
            if kernel.variance == 0:
                self._chol_cache[key] = None
            else:
                cov = _gamma_cov(self.model, kernel)
                self._chol_cache[key] = cholesky_with_jitter(
                    cov, kernel.variance, context="sampler smoothing prior"
                )
        return self._chol_cache[key]

    def log_smoothing(self) -> float:
        total = 0.0
        for c in range(self.C):
            L = self._gamma_chol(self.kernel_for(c))
            g = self.gamma[c]
            if L is None:
                if np.max(np.abs(g), initial=0.0) > 1e-12:
                    return -np.inf
                continue
            z = np.linalg.solve(L, g)
            total += -0.5 * (g.size * np.log(2 * np.pi) + z @ z) - np.sum(np.log(np.diag(L)))
        return float(total)

    def epsilon(self) -> np.ndarray:
        return self.gamma @ self.BA.T

    def log_likelihood(self) -> float:
        try:
            if self.direct:
                base = _fixed_linkscale(self.model, self.params_dict(), self.covariates, self.model.times)
                return self.prepared.loglik_gaussian(base + self.epsilon())
            eta = evaluate_eta(self.model, self.params_dict(), self.covariates, self.epsilon())
            total = 0.0
            for c, (t_idx, y, v, b) in enumerate(self.prepared.by_pop):
                if t_idx.size == 0:
                    continue
                center = self.datamodel.transformation.apply(eta[c, t_idx])
                resid = y - (center + b)
                total += float(-0.5 * np.sum(np.log(2 * np.pi * v) + resid ** 2 / v))
            return total
        except ParameterError:
            return -np.inf

    def log_posterior(self) -> float:
        lp = self.log_prior_total()
        if not np.isfinite(lp):
            return lp
        ls = self.log_smoothing()
        if not np.isfinite(ls):
            return ls
        return lp + ls + self.log_likelihood()

    def log_posterior_marginal(self) -> float:
        """Priors plus the likelihood with the smoothing coefficients
        integrated out (linear-Gaussian models only).

        Scalar blocks sampled against this collapsed target mix far
        better than against the joint, because the ridge between the
        regression parameters and the smoother disappears.
        """
        lp = self.log_prior_total()
        if not np.isfinite(lp):
            return lp
        try:
            base = _fixed_linkscale(self.model, self.params_dict(), self.covariates, self.model.times)
        except ParameterError:
            return -np.inf
        total = lp
        for c in range(self.C):
            t_idx, y, v, b = self.prepared.by_pop[c]
            if t_idx.size == 0:
                continue
            kernel = self.kernel_for(c)
            prior_cov = _gamma_cov(self.model, kernel)
            M = self.BA[t_idx, :]
            obs_cov = M @ prior_cov @ M.T + np.diag(v)
            resid = y - b - base[c, t_idx]
            try:
                L = np.linalg.cholesky(0.5 * (obs_cov + obs_cov.T))
            except np.linalg.LinAlgError:
                return -np.inf
            z = np.linalg.solve(L, resid)
            total += float(
                -0.5 * (resid.size * np.log(2 * np.pi) + z @ z) - np.sum(np.log(np.diag(L)))
            )
        return total

    # -- blocks -----------------------------------------------------------

    def _build_blocks(self):
        blocks = []
        for symbol in self.setup.free_symbols():
            strategy = self.setup.bindings[symbol]
            role = self.setup.roles.get(symbol, "shared")
            transform = self.setup.transform_of(symbol)
            if role == "population" or isinstance(strategy, (Hierarchical, MultiplicativeTN)):
                for c in range(self.C):
                    blocks.append(
                        _Block(
                            f"{symbol}[{self.model.populations[c]}]",
                            lambda s=symbol, c=c: float(self.state[s][c]),
                            self._setter_pop(symbol, c),
                            transform=transform,
                        )
                    )
            elif role == "vector":
                for k in range(self.setup.vector_lengths.get(symbol, 1)):
                    blocks.append(
                        _Block(
                            f"{symbol}[{k}]",
                            lambda s=symbol, k=k: float(self.state[s][k]),
                            self._setter_vec(symbol, k),
                            transform=transform,
                        )
                    )
            else:
                blocks.append(
                    _Block(
                        symbol,
                        lambda s=symbol: float(self.state[s]),
                        self._setter_scalar(symbol),
                        transform=transform,
                    )
                )
        for name in sorted(self.hyper):
            transform = "log" if ".sd" in name or name.endswith(".center") else "identity"
            blocks.append(
                _Block(
                    name,
                    lambda n=name: float(self.hyper[n]),
                    self._setter_hyper(name),
                    transform=transform,
                )
            )
        return blocks

    def _setter_pop(self, symbol, c):
        def setter(value):
            self.state[symbol] = np.array(self.state[symbol], dtype=float)
            self.state[symbol][c] = value

        return setter

    def _setter_vec(self, symbol, k):
        def setter(value):
            self.state[symbol] = np.array(self.state[symbol], dtype=float)
            self.state[symbol][k] = value

        return setter

    def _setter_scalar(self, symbol):
        def setter(value):
            self.state[symbol] = float(value)

        return setter

    def _setter_hyper(self, name):
        def setter(value):
            self.hyper[name] = float(value)

        return setter

    # -- updates ----------------------------------------------------------

    def metropolis_step(self, block: _Block, current_lp: float, target=None) -> float:
        target = target or self.log_posterior
        old = block.getter()
        proposal = block.propose(self.rng)
        block.attempts += 1
        block.setter(proposal)
        new_lp = target()
        log_ratio = (new_lp + block.jacobian(proposal)) - (current_lp + block.jacobian(old))
        if np.isfinite(new_lp) and np.log(self.rng.uniform()) < log_ratio:
            block.accepted += 1
            return new_lp
        block.setter(old)
        return current_lp

    def gamma_conjugate_update(self):
        base = _fixed_linkscale(self.model, self.params_dict(), self.covariates, self.model.times)
        for c in range(self.C):
            kernel = self.kernel_for(c)
            prior_cov = _gamma_cov(self.model, kernel)
            t_idx, y, v, b = self.prepared.by_pop[c]
            if kernel.variance == 0:
                self.gamma[c] = 0.0
                continue
            if t_idx.size == 0:
                L = self._gamma_chol(kernel)
                self.gamma[c] = L @ self.rng.standard_normal(self.n_free)
                continue
            M = self.BA[t_idx, :]
            resid = y - b - base[c, t_idx]
            try:
                prior_chol = self._gamma_chol(kernel)
                prior_prec = np.linalg.inv(prior_cov + 1e-10 * kernel.variance * np.eye(self.n_free))
                prec = prior_prec + (M.T / v) @ M
                Lp = np.linalg.cholesky(0.5 * (prec + prec.T))
            except np.linalg.LinAlgError:
                continue
            rhs = M.T @ (resid / v)
            mean = np.linalg.solve(Lp.T, np.linalg.solve(Lp, rhs))
            z = self.rng.standard_normal(self.n_free)
            self.gamma[c] = mean + np.linalg.solve(Lp.T, z)

    def gamma_rw_update(self, block: _Block, current_lp: float) -> float:
        scale = np.exp(block.log_scale)
        for c in range(self.C):
            kernel = self.kernel_for(c)
            L = self._gamma_chol(kernel)
            if L is None:
                continue
            block.attempts += 1
            old = self.gamma[c].copy()
            self.gamma[c] = old + scale * (L @ self.rng.standard_normal(self.n_free))
            new_lp = self.log_posterior()
            if np.isfinite(new_lp) and np.log(self.rng.uniform()) < new_lp - current_lp:
                block.accepted += 1
                current_lp = new_lp
            else:
                self.gamma[c] = old
        return current_lp


def _kernel_fields(kernel) -> dict:
    from dataclasses import fields as dc_fields

    return {f.name: getattr(kernel, f.name) for f in dc_fields(kernel)}


def fit_mcmc(model: ProcessModel, observations, datamodel: DataModelSpec,
             setup: EstimationSetup, chains: int = 4, iterations: int = 1000,
             warmup: int = 1000, seed: int = 0, covariates=None) -> FitResult:
    """Adaptive random-walk Metropolis-within-Gibbs fit.

    Scalar parameters (including hierarchy means, group means, and
    variances) get adaptive random-walk updates tuned during warmup;
    smoothing coefficients are drawn from their exact Gaussian
    conditional when the model is linear in them, and by correlated
    random-walk proposals otherwise.  Deterministic for a given seed.
    """
    prepared = _PreparedObservations(model, observations, datamodel)
    chain_seeds = np.random.SeedSequence(seed).spawn(chains)
    all_params = None
    all_delta = np.empty((chains, iterations, model.n_populations, 0))
    all_eta = np.empty((chains, iterations, model.n_populations, model.times.size))
    kernels_flat = []
    for chain in range(chains):
        sampler = _Sampler(
            model, prepared, datamodel, setup, covariates, np.random.default_rng(chain_seeds[chain])
        )
        if chain == 0:
            K = sampler.K
            all_delta = np.empty((chains, iterations, model.n_populations, K))
            all_params = {
                s: np.empty(
                    (chains, iterations) + (np.shape(sampler.state[s]) if np.ndim(sampler.state[s]) else ())
                )
                for s in setup.bindings
            }
            for name in sampler.hyper:
                all_params[name] = np.empty((chains, iterations))
        target = sampler.log_posterior_marginal if sampler.direct else sampler.log_posterior
        lp = target()
        if not np.isfinite(lp):
            offender = _find_offending_block(sampler)
            raise InitializationError(
                f"non-finite log posterior at initialization ({offender})"
            )
        gamma_block = _Block("smoothing", lambda: 0.0, lambda v: None, target=0.23, scale=0.5)
        for it in range(warmup + iterations):
            for block in sampler.blocks:
                lp = sampler.metropolis_step(block, lp, target=target)
            if sampler.direct:
                # collapsed Gibbs: scalar blocks see the marginal target,
                # then the coefficients are redrawn from their exact
                # conditional given the new parameters
                sampler.gamma_conjugate_update()
            else:
                lp = sampler.gamma_rw_update(gamma_block, lp)
            if it < warmup:
                if (it + 1) % 25 == 0:
                    for block in sampler.blocks:
                        block.adapt()
                    gamma_block.adapt()
                continue
            keep = it - warmup
            delta = sampler.gamma @ sampler.A.T
            all_delta[chain, keep] = delta
            eps = sampler.epsilon()
            all_eta[chain, keep] = evaluate_eta(
                model, sampler.params_dict(), covariates, eps
            )
            for s in setup.bindings:
                all_params[s][chain, keep] = sampler.state[s]
            for name in sampler.hyper:
                all_params[name][chain, keep] = sampler.hyper[name]
            kernels_flat.append([sampler.kernel_for(c) for c in range(model.n_populations)])
    pop_params = tuple(
        s for s, role in setup.roles.items() if role == "population"
    ) + tuple(
        s for s, strat in setup.bindings.items()
        if isinstance(strat, (Hierarchical, MultiplicativeTN))
    )
    result = FitResult(
        model.populations, model.times, all_params, all_delta, all_eta, {},
        seed=seed, chains=chains, iterations=iterations, warmup=warmup,
        kernels=kernels_flat,  # chain-major, matching the flattened draw order
        population_params=tuple(sorted(set(pop_params))),
    )
    result.diagnostics = compute_diagnostics(result)
    return result


def _find_offending_block(sampler) -> str:
    if not np.isfinite(sampler.log_prior_total()):
        for symbol, strategy in sampler.setup.bindings.items():
            if isinstance(strategy, Fixed):
                continue
            single = log_prior(
                strategy, sampler.state[symbol],
                populations=sampler.model.populations,
                hypers=sampler._hier_hypers(symbol, strategy) if isinstance(strategy, Hierarchical) else None,
            ) if not isinstance(strategy, Prior) else strategy.logpdf(np.atleast_1d(sampler.state[symbol]))
            if not np.isfinite(single):
                return f"prior of '{symbol}'"
        return "prior"
    if not np.isfinite(sampler.log_smoothing()):
        return "smoothing component"
    return "likelihood"


# ------------------------------------------------------------ diagnostics


def split_rhat(series: np.ndarray) -> float:
    """Split potential scale reduction over (chains, draws) series."""
    series = np.asarray(series, dtype=float)
    chains, n = series.shape
    half = n // 2
    if half < 2:
        return np.nan
    split = series[:, : 2 * half].reshape(chains * 2, half)
    means = split.mean(axis=1)
    variances = split.var(axis=1, ddof=1)
    W = variances.mean()
    B = half * means.var(ddof=1)
    if W <= 0:
        return 1.0
    return float(np.sqrt((W * (half - 1) / half + B / half) / W))


def effective_sample_size(series: np.ndarray) -> float:
    """Initial-positive-sequence estimate summed over chains."""
    series = np.asarray(series, dtype=float)
    total = 0.0
    for chain in series:
        n = chain.size
        centered = chain - chain.mean()
        var = centered @ centered / n
        if var == 0:
            total += n
            continue
        acf = np.correlate(centered, centered, mode="full")[n - 1:] / (n * var)
        tau = 1.0
        for lag in range(1, n - 1, 2):
            pair = acf[lag] + acf[lag + 1] if lag + 1 < n else acf[lag]
            if pair < 0:
                break
            tau += 2 * pair
        total += n / tau
    return float(total)


def compute_diagnostics(result: FitResult) -> dict:
    out = {}
    for name, series in result.scalar_series().items():
        if np.allclose(series, series.flat[0]):
            out[name] = (1.0, float(series.size))
        else:
            out[name] = (split_rhat(series), effective_sample_size(series))
    return out


# --------------------------------------------------------------- summary


def summarize(result: FitResult, quantiles=(0.025, 0.1, 0.5, 0.9, 0.975)) -> dict:
    """Empirical eta quantiles per grid cell plus parameter summaries."""
    for q in quantiles:
        if not (0.0 < q < 1.0):
            raise ParameterError(f"quantile {q} outside (0, 1)")
    eta = result.flat_eta()
    grid = np.quantile(eta, quantiles, axis=0)  # (Q, C, T)
    params = {}
    for name, series in result.scalar_series().items():
        flat = series.reshape(-1)
        rhat, ess = result.diagnostics.get(name, (np.nan, np.nan))
        params[name] = {
            "mean": float(flat.mean()),
            "quantiles": {q: float(np.quantile(flat, q)) for q in quantiles},
            "rhat": rhat,
            "ess": ess,
        }
    return {
        "quantiles": tuple(quantiles),
        "eta": np.moveaxis(grid, 0, -1),  # (C, T, Q)
        "parameters": params,
    }
