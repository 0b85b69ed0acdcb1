"""Transformation bases, difference operators, and constraint projections.

A basis maps ``K`` coefficients to ``T`` grid values through a full
column rank ``T x K`` matrix.  The identity basis keeps coefficients and
grid values interchangeable; the cubic B-spline basis reduces dimension
by placing knots on a coarser uniform grid.

Difference matrices use the forward convention ``(D @ x)[i] = x[i+1] - x[i]``,
and ``constraint_projection`` gives the minimum-norm right inverse used to
rebuild coefficients from their differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import GridError, ParameterError

__all__ = [
    "BasisSpec",
    "identity_basis",
    "bspline_basis",
    "build_basis",
    "extend_basis",
    "difference_matrix",
    "constraint_projection",
    "basis_from_name",
]


@dataclass(frozen=True)
class BasisSpec:
    """Description of a coefficient basis.

    Parameters
    ----------
    variant : {'identity', 'bspline'}
    degree : int
        Spline degree (ignored for identity).
    knot_spacing : float
        Distance between uniform knots in time units (ignored for identity).
    domain : tuple of (float, float), optional
        Closed time interval the basis must span.  When omitted, the
        domain is taken from the evaluation grid.
    """

    variant: str
    degree: int = 3
    knot_spacing: float = 2.5
    domain: tuple | None = None

    def __post_init__(self):
        if self.variant not in ("identity", "bspline"):
            raise ParameterError(f"unknown basis variant '{self.variant}'")
        if self.variant == "bspline":
            if self.degree < 0:
                raise ParameterError("spline degree must be >= 0")
            if not (self.knot_spacing > 0 and math.isfinite(self.knot_spacing)):
                raise ParameterError("knot spacing must be positive and finite")

    @property
    def is_identity(self) -> bool:
        return self.variant == "identity"


def identity_basis(domain: tuple | None = None) -> BasisSpec:
    return BasisSpec("identity", domain=domain)


def bspline_basis(degree: int = 3, knot_spacing: float = 2.5, domain: tuple | None = None) -> BasisSpec:
    return BasisSpec("bspline", degree=degree, knot_spacing=knot_spacing, domain=domain)


def _resolve_domain(spec: BasisSpec, times: np.ndarray) -> tuple:
    if spec.domain is not None:
        lo, hi = float(spec.domain[0]), float(spec.domain[1])
    else:
        lo, hi = float(times[0]), float(times[-1])
    if times[0] < lo - 1e-12 or times[-1] > hi + 1e-12:
        raise GridError(
            f"times [{times[0]}, {times[-1]}] fall outside the basis domain [{lo}, {hi}]"
        )
    return lo, hi


def _knot_vector(spec: BasisSpec, lo: float, hi: float) -> np.ndarray:
    """Uniform breakpoints anchored at the domain start, clamped on the
    left and continued past the right end so the basis can be extended
    later without disturbing existing columns."""
    span = hi - lo
    if span <= 0:
        raise GridError("degenerate basis domain: shorter than one knot interval")
    n_intervals = max(1, math.ceil(span / spec.knot_spacing - 1e-9))
    breakpoints = lo + spec.knot_spacing * np.arange(n_intervals + 1)
    right = breakpoints[-1] + spec.knot_spacing * np.arange(1, spec.degree + 1)
    return np.concatenate([np.full(spec.degree, lo), breakpoints, right])


def build_basis(spec: BasisSpec, times) -> np.ndarray:
    """Evaluate the basis matrix ``B`` (shape T x K) on a time grid.

    For B-splines, knots are placed every ``knot_spacing`` time units
    starting at the domain's left end; the left boundary knot is repeated
    ``degree`` times.  Rows form a partition of unity over the domain.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise GridError("times must be a nonempty 1-d array")
    if spec.is_identity:
        return np.eye(times.size)
    lo, hi = _resolve_domain(spec, times)
    knots = _knot_vector(spec, lo, hi)
    return BSpline.design_matrix(times, knots, spec.degree).toarray()


def n_basis_functions(spec: BasisSpec, times) -> int:
    """Number of coefficients K the basis produces over a grid."""
    times = np.asarray(times, dtype=float)
    if spec.is_identity:
        return times.size
    lo, hi = _resolve_domain(spec, times)
    knots = _knot_vector(spec, lo, hi)
    return len(knots) - spec.degree - 1


def extend_basis(spec: BasisSpec, times_obs, times_proj) -> np.ndarray:
    """Basis over the observation grid extended by a projection grid.

    New knots are appended on the right only.  The result restricted to
    the observation rows and the original K columns is exactly
    ``build_basis(spec, times_obs)``.
    """
    times_obs = np.asarray(times_obs, dtype=float)
    times_proj = np.asarray(times_proj, dtype=float)
    if times_proj.size == 0:
        return build_basis(spec, times_obs)
    if times_proj.min() <= times_obs.max():
        raise GridError("projection times must lie strictly after the observation grid")
    full = np.concatenate([times_obs, times_proj])
    if spec.is_identity:
        return np.eye(full.size)
    lo, hi = _resolve_domain(spec, times_obs)
    extended = BasisSpec(spec.variant, spec.degree, spec.knot_spacing, (lo, float(times_proj.max())))
    return build_basis(extended, full)


def difference_matrix(K: int, d: int) -> np.ndarray:
    """Order-``d`` forward difference matrix of shape ``(K - d, K)``.

    ``d = 1`` has rows ``(-1, 1)``; higher orders are compositions, so
    ``d = 2`` has rows ``(1, -2, 1)``.  Applying the matrix to a
    polynomial sequence of degree below ``d`` gives zero.
    """
    if d < 1:
        raise ParameterError("difference order must be >= 1")
    if K <= d:
        raise ParameterError(f"need more than {d} coefficients to difference {d} times (got {K})")
    D = np.eye(K)
    for size in range(K, K - d, -1):
        step = np.zeros((size - 1, size))
        idx = np.arange(size - 1)
        step[idx, idx] = -1.0
        step[idx, idx + 1] = 1.0
        D = step @ D
    return D


def constraint_projection(D: np.ndarray) -> np.ndarray:
    """Minimum-norm right inverse ``D' (D D')^{-1}`` of a difference matrix.

    Maps differenced coefficients back to the unique coefficient vector
    that reproduces them and is orthogonal to the difference operator's
    null space (so, for first differences, the result sums to zero).
    """
    D = np.asarray(D, dtype=float)
    gram = D @ D.T
    try:
        return D.T @ np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        raise ParameterError("difference matrix is rank deficient") from None


def basis_from_name(name: str, **params) -> BasisSpec:
    """Build a basis from its spec-file keyword (``identity`` or ``bspline``)."""
    if name == "identity":
        if params:
            raise ParameterError("identity basis takes no parameters")
        return identity_basis()
    if name == "bspline":
        allowed = {"degree", "knot_spacing"}
        extra = set(params) - allowed
        if extra:
            raise ParameterError(f"bspline basis does not take {sorted(extra)}")
        return bspline_basis(
            degree=int(params.get("degree", 3)),
            knot_spacing=float(params.get("knot_spacing", 2.5)),
        )
    raise ParameterError(f"unknown basis '{name}'")
