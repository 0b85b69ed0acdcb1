"""Minimal data model: transformed-normal likelihoods with fixed
sampling variance, optional per-source non-sampling variance, and
optional constant per-source bias.

Observations are linked to the latent indicator at their population and
time; the transformation (identity, log, log10, or logit) is applied to
both the observed value and the latent value, and the two variance terms
add on the transformed scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, ParameterError
from .process import Link

__all__ = ["Observation", "DataModelSpec", "log_likelihood"]


@dataclass(frozen=True)
class Observation:
    population: str
    time: float
    value: float
    variance: float  # fixed sampling variance on the transformed scale
    source: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ParameterError("observation value must be finite")
        if not (np.isfinite(self.variance) and self.variance >= 0):
            raise ParameterError("sampling variance must be finite and >= 0")


@dataclass(frozen=True)
class DataModelSpec:
    """Transformation plus per-source bias and non-sampling variance.

    Sources missing from the maps default to zero bias and zero extra
    variance.
    """

    transformation: Link = Link("identity")
    bias: dict = field(default_factory=dict)
    nonsampling_variance: dict = field(default_factory=dict)

    def source_bias(self, source: str) -> float:
        return float(self.bias.get(source, 0.0))

    def source_nonsampling(self, source: str, override=None) -> float:
        if override is not None and source in override:
            return float(override[source])
        return float(self.nonsampling_variance.get(source, 0.0))


def log_likelihood(spec: DataModelSpec, observations, eta, populations, times,
                   nonsampling=None) -> float:
    """Sum of transformed-normal log densities of the observations.

    Parameters
    ----------
    eta : array, shape (C, T)
        Latent indicator over the model grid.
    nonsampling : mapping, optional
        Per-source non-sampling variances overriding the spec (used when
        they are estimated rather than fixed).
    """
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    pop_idx = {p: i for i, p in enumerate(populations)}
    total = 0.0
    for obs in observations:
        if obs.population not in pop_idx:
            raise CoverageError(f"observation population '{obs.population}' not in the model")
        hits = np.nonzero(np.abs(times - obs.time) < 1e-9)[0]
        if hits.size != 1:
            raise CoverageError(
                f"observation at (population={obs.population}, time={obs.time:g}) "
                "falls outside the model's time grid"
            )
        center = spec.transformation.apply(eta[pop_idx[obs.population], hits[0]])
        transformed = spec.transformation.apply(obs.value)
        if not np.isfinite(transformed):
            raise ParameterError(
                f"observed value {obs.value} outside the domain of the "
                f"{spec.transformation.name} transformation"
            )
        var = obs.variance + spec.source_nonsampling(obs.source, nonsampling)
        if var <= 0:
            raise ParameterError("total observation variance must be positive")
        resid = transformed - (center + spec.source_bias(obs.source))
        total += -0.5 * (np.log(2 * np.pi * var) + resid ** 2 / var)
    return float(total)
