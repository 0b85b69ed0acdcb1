"""Temporal models for multiple populations.

A composable library for latent-trend models of demographic and health
indicators: process models built from covariate, systematic, offset, and
smoothing components; Gaussian smoothing with spline bases and
differencing constraints; simulation, fitting, and projection; and a
parser/validator for the standard model specification template.
"""

from importlib import resources

from .basis import BasisSpec, bspline_basis, identity_basis
from .datamodel import DataModelSpec, Observation
from .errors import TmmpError
from .hierarchy import Fixed, Hierarchical, MultiplicativeTN, Prior
from .inference import EstimationSetup, FitResult, fit_conjugate, fit_mcmc, summarize
from .kernels import AR1, ARMA11, Matern, SquaredExponential, WhiteNoise
from .modelspec import (
    DataBindings,
    ModelSpec,
    compare_specs,
    compile_spec,
    emit_spec,
    parse_spec,
    validate_spec,
)
from .process import (
    GridTable,
    Link,
    ProcessModel,
    evaluate_eta,
    project_default,
    project_pooled,
    simulate,
)
from .smoothing import SmoothingModel, conditional_projection, log_density, sample

__version__ = "0.1.0"

FIXTURE_NAMES = ("gbd", "b3", "fpem", "nmr", "bmat", "subnational")


def fixture_text(name: str) -> str:
    """Contents of one of the shipped example specification files."""
    return (resources.files(__name__) / "fixtures" / f"{name}.tmmp").read_text("utf-8")
