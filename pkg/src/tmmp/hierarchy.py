"""Parameter estimation strategies: fixed values, priors, hierarchies.

Every free parameter of a process model binds to exactly one strategy.
Hierarchical strategies share information across populations through
nested group-level distributions (for example countries within
sub-region within region within world); the grouping maps are plain
dictionaries from population id to a tuple of group labels, innermost
level first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, truncnorm

from .errors import GroupingError, ParameterError, RequiresBoundsError

__all__ = [
    "Fixed",
    "Prior",
    "Hierarchical",
    "MultiplicativeTN",
    "vague_prior",
    "log_prior",
    "sample_from_prior",
]

_SD_FLOOR = 0.0  # exact zero treated as a point mass


@dataclass(frozen=True)
class Fixed:
    """Parameter pinned to a known value."""

    value: float


@dataclass(frozen=True)
class Prior:
    """Independent prior from a small family of distributions.

    Families: ``normal(mean, sd)``, ``truncated_normal(mean, sd, lo, hi)``,
    ``uniform(lo, hi)``, ``half_normal(scale)``.
    """

    family: str
    params: tuple

    _ARITY = {"normal": 2, "truncated_normal": 4, "uniform": 2, "half_normal": 1}

    def __post_init__(self):
        if self.family not in self._ARITY:
            raise ParameterError(f"unknown prior family '{self.family}'")
        if len(self.params) != self._ARITY[self.family]:
            raise ParameterError(
                f"prior '{self.family}' takes {self._ARITY[self.family]} parameters"
            )
        if self.family == "uniform" and not np.isfinite(self.params).all():
            raise RequiresBoundsError("uniform prior needs finite bounds")

    def logpdf(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.family == "normal":
            mean, sd = self.params
            return float(np.sum(_normal_logpdf(x, mean, sd)))
        if self.family == "truncated_normal":
            mean, sd, lo, hi = self.params
            return float(np.sum(_tn_logpdf(x, mean, sd, lo, hi)))
        if self.family == "uniform":
            lo, hi = self.params
            inside = (x >= lo) & (x <= hi)
            return float(np.where(inside, -np.log(hi - lo), -np.inf).sum())
        scale = self.params[0]
        if np.any(x < 0):
            return -np.inf
        return float(np.sum(_normal_logpdf(x, 0.0, scale) + np.log(2.0)))

    def sample(self, rng, size: int) -> np.ndarray:
        if self.family == "normal":
            mean, sd = self.params
            return rng.normal(mean, sd, size=size)
        if self.family == "truncated_normal":
            mean, sd, lo, hi = self.params
            a, b = (lo - mean) / sd, (hi - mean) / sd
            return truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)
        if self.family == "uniform":
            lo, hi = self.params
            return rng.uniform(lo, hi, size=size)
        return np.abs(rng.normal(0.0, self.params[0], size=size))

    def median(self) -> float:
        if self.family == "normal":
            return self.params[0]
        if self.family == "truncated_normal":
            mean, sd, lo, hi = self.params
            a, b = (lo - mean) / sd, (hi - mean) / sd
            return float(truncnorm.median(a, b, loc=mean, scale=sd))
        if self.family == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return float(self.params[0] * norm.ppf(0.75))


@dataclass(frozen=True)
class Hierarchical:
    """Nested normal (or truncated normal) sharing across populations.

    ``levels`` counts the distribution layers: 1 means populations drawn
    directly around a single top-level mean; 3 means population within
    group within supergroup within the top level.  ``groupings`` maps
    each population to ``levels - 1`` group labels, innermost first.
    ``level_sds`` holds one entry per layer, innermost first; each is a
    fixed standard deviation or a hyperprior for it.  ``on_log_scale``
    places the layers on log-transformed values (for scale parameters).
    """

    pi: str = "normal"
    levels: int = 1
    groupings: dict | None = None
    level_sds: tuple = (1.0,)
    mean: object = 0.0  # float or Prior for the top-level mean
    bounds: tuple | None = None  # for pi = truncated_normal
    on_log_scale: bool = False

    def __post_init__(self):
        if self.pi not in ("normal", "truncated_normal"):
            raise ParameterError(f"unknown hierarchy distribution '{self.pi}'")
        if self.pi == "truncated_normal" and self.bounds is None:
            raise RequiresBoundsError("truncated-normal hierarchy needs bounds")
        if self.levels < 1:
            raise ParameterError("hierarchy needs at least one level")
        if len(self.level_sds) != self.levels:
            raise ParameterError("need one sd (or hyperprior) per hierarchy level")

    def group_labels(self, populations) -> list:
        """Per-level lists of group labels aligned with ``populations``.

        Checks that the grouping map is total and nested consistently.
        """
        if self.levels == 1:
            return []
        if self.groupings is None:
            raise GroupingError("multi-level hierarchy needs a grouping map")
        levels = []
        for pop in populations:
            if pop not in self.groupings:
                raise GroupingError(f"population '{pop}' missing from groupings")
            entry = tuple(self.groupings[pop])
            if len(entry) != self.levels - 1:
                raise GroupingError(
                    f"population '{pop}' needs {self.levels - 1} group labels, got {len(entry)}"
                )
        for level in range(self.levels - 1):
            levels.append([tuple(self.groupings[p])[level] for p in populations])
        # nested consistency: a group at level l has exactly one parent
        for level in range(self.levels - 2):
            parent_of = {}
            for pop in populations:
                entry = tuple(self.groupings[pop])
                if parent_of.setdefault(entry[level], entry[level + 1]) != entry[level + 1]:
                    raise GroupingError(
                        f"group '{entry[level]}' maps to multiple level-{level + 2} groups"
                    )
        return levels

    def _layer_logpdf(self, x, mean, sd) -> float:
        x = np.asarray(x, dtype=float)
        mean = np.asarray(mean, dtype=float)
        if sd <= _SD_FLOOR:
            # point mass: zero contribution when the values sit on the mean
            return 0.0 if np.allclose(x, mean, atol=1e-12) else -np.inf
        if self.pi == "normal":
            return float(np.sum(_normal_logpdf(x, mean, sd)))
        lo, hi = self.bounds
        return float(np.sum(_tn_logpdf(x, mean, sd, lo, hi)))


@dataclass(frozen=True)
class MultiplicativeTN:
    """Scale sharing through a common center and a truncated-normal
    multiplier: ``value[c] = center * (1 + m[c])`` with
    ``m[c] ~ TN_(lo, hi)(0, sd^2)``.

    ``center_prior`` and ``sd_prior`` are hyperpriors for the two
    unknowns of the structure.
    """

    lo: float = -1.0
    hi: float = 2.0
    center_prior: Prior = field(default_factory=lambda: Prior("uniform", (0.0, 100.0)))
    sd_prior: Prior = field(default_factory=lambda: Prior("half_normal", (1.0,)))

    def multipliers(self, values, center) -> np.ndarray:
        if center <= 0:
            raise ParameterError("multiplicative center must be positive")
        return np.asarray(values, dtype=float) / center - 1.0


def vague_prior(kind: str = "real", bounds: tuple | None = None) -> Prior:
    """The package-wide concrete meaning of a vague prior.

    Real-valued parameters get a wide normal (sd 100); variance-like
    parameters a uniform over (0, 100); bounded parameters a uniform
    over their stated bounds.
    """
    if kind == "real":
        return Prior("normal", (0.0, 100.0))
    if kind == "positive":
        return Prior("uniform", (0.0, 100.0))
    if kind == "bounded":
        if bounds is None:
            raise RequiresBoundsError("vague prior on a bounded parameter needs bounds")
        return Prior("uniform", tuple(bounds))
    raise ParameterError(f"unknown vague-prior kind '{kind}'")


def _normal_logpdf(x, mean, sd):
    if np.any(np.asarray(sd) <= 0):
        raise ParameterError("normal sd must be positive")
    z = (np.asarray(x) - mean) / sd
    return -0.5 * z ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)


def _tn_logpdf(x, mean, sd, lo, hi):
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return truncnorm.logpdf(np.asarray(x), a, b, loc=mean, scale=sd)


def _resolve_sd(entry, hypers, key):
    if isinstance(entry, Prior):
        if hypers is None or key not in hypers:
            raise ParameterError(f"hierarchy needs a value for hyperparameter '{key}'")
        return float(hypers[key])
    return float(entry)


def log_prior(strategy, values, populations=None, hypers=None) -> float:
    """Log prior density of parameter values under a strategy.

    ``values`` is the per-population vector (or a scalar for shared
    parameters).  ``hypers`` carries hierarchy internals when needed:
    ``mean`` (top level), ``sds`` per level, and ``group_means`` as one
    dict per intermediate level (innermost first).
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if isinstance(strategy, Fixed):
        return 0.0 if np.allclose(values, strategy.value, atol=1e-12) else -np.inf
    if isinstance(strategy, Prior):
        return strategy.logpdf(values)
    if isinstance(strategy, MultiplicativeTN):
        hypers = hypers or {}
        center = float(hypers.get("center", 1.0))
        sd = float(hypers.get("sd", 1.0))
        m = strategy.multipliers(values, center)
        return float(np.sum(_tn_logpdf(m, 0.0, sd, strategy.lo, strategy.hi))) - values.size * np.log(center)
    if not isinstance(strategy, Hierarchical):
        raise ParameterError(f"unknown strategy {type(strategy).__name__}")

    hypers = hypers or {}
    if populations is None:
        populations = [f"pop{i}" for i in range(values.size)]
    work = np.log(values) if strategy.on_log_scale else values
    jacobian = -float(np.sum(np.log(values))) if strategy.on_log_scale else 0.0
    sds = [
        _resolve_sd(entry, hypers, f"sd{level + 1}")
        for level, entry in enumerate(strategy.level_sds)
    ]
    top_mean = float(hypers["mean"]) if "mean" in hypers else (
        strategy.mean if not isinstance(strategy.mean, Prior) else strategy.mean.median()
    )
    labels = strategy.group_labels(populations)
    group_means = hypers.get("group_means", ())
    total = jacobian
    if strategy.levels == 1:
        return total + strategy._layer_logpdf(work, top_mean, sds[0])
    if len(group_means) != strategy.levels - 1:
        raise ParameterError(
            f"{strategy.levels}-level hierarchy needs {strategy.levels - 1} group-mean maps"
        )
    # populations around their innermost group means
    inner = np.array([group_means[0][g] for g in labels[0]])
    total += strategy._layer_logpdf(work, inner, sds[0])
    # intermediate layers
    for level in range(1, strategy.levels - 1):
        child = group_means[level - 1]
        parent = group_means[level]
        parent_label = {}
        for pop in populations:
            entry = tuple(strategy.groupings[pop])
            parent_label[entry[level - 1]] = entry[level]
        x = np.array([child[g] for g in sorted(child)])
        mu = np.array([parent[parent_label[g]] for g in sorted(child)])
        total += strategy._layer_logpdf(x, mu, sds[level])
    # outermost groups around the top-level mean
    outer = group_means[-1]
    x = np.array([outer[g] for g in sorted(outer)])
    total += strategy._layer_logpdf(x, top_mean, sds[-1])
    return total


def sample_from_prior(strategy, rng_seed, populations) -> tuple:
    """Draw parameter values for every population (top-down for
    hierarchies).  Returns ``(values, info)`` where ``info`` carries the
    sampled hierarchy internals (top mean, group means, level sds)."""
    rng = np.random.default_rng(rng_seed)
    n = len(populations)
    if isinstance(strategy, Fixed):
        return np.full(n, strategy.value), {}
    if isinstance(strategy, Prior):
        return strategy.sample(rng, n), {}
    if isinstance(strategy, MultiplicativeTN):
        center = float(strategy.center_prior.sample(rng, 1)[0])
        sd = max(float(strategy.sd_prior.sample(rng, 1)[0]), 1e-12)
        a, b = strategy.lo / sd, strategy.hi / sd
        m = truncnorm.rvs(a, b, loc=0.0, scale=sd, size=n, random_state=rng)
        return center * (1.0 + m), {"center": center, "sd": sd}
    if not isinstance(strategy, Hierarchical):
        raise ParameterError(f"unknown strategy {type(strategy).__name__}")

    sds = [
        float(entry.sample(rng, 1)[0]) if isinstance(entry, Prior) else float(entry)
        for entry in strategy.level_sds
    ]
    top = (
        float(strategy.mean.sample(rng, 1)[0])
        if isinstance(strategy.mean, Prior)
        else float(strategy.mean)
    )
    labels = strategy.group_labels(populations)
    info = {"mean": top, "sds": tuple(sds), "group_means": []}

    def draw_around(mean, sd, size):
        if sd <= _SD_FLOOR:
            return np.full(size, mean) if np.ndim(mean) == 0 else np.asarray(mean, dtype=float)
        if strategy.pi == "normal":
            return rng.normal(mean, sd, size=size)
        lo, hi = strategy.bounds
        mean_arr = np.broadcast_to(np.asarray(mean, dtype=float), (size,))
        a, b = (lo - mean_arr) / sd, (hi - mean_arr) / sd
        return truncnorm.rvs(a, b, loc=mean_arr, scale=sd, size=size, random_state=rng)

    if strategy.levels == 1:
        values = draw_around(top, sds[0], n)
    else:
        # outermost level first
        level_means = [None] * (strategy.levels - 1)
        outer_groups = sorted(set(labels[-1]))
        outer_draws = draw_around(top, sds[-1], len(outer_groups))
        level_means[-1] = dict(zip(outer_groups, outer_draws))
        for level in range(strategy.levels - 3, -1, -1):
            parent_label = {}
            for pop in populations:
                entry = tuple(strategy.groupings[pop])
                parent_label[entry[level]] = entry[level + 1]
            groups = sorted(set(labels[level]))
            means = np.array([level_means[level + 1][parent_label[g]] for g in groups])
            draws = draw_around(means, sds[level + 1], len(groups))
            level_means[level] = dict(zip(groups, draws))
        inner = np.array([level_means[0][g] for g in labels[0]])
        values = draw_around(inner, sds[0], n)
        info["group_means"] = [dict(m) for m in level_means]
    if strategy.on_log_scale:
        values = np.exp(values)
    return values, info
