"""Gaussian smoothing components on (possibly differenced) coefficients.

A smoothing model is ``epsilon = B @ delta`` where the order-``r``
differences of ``delta`` are zero-mean Gaussian with a stationary
autocovariance.  For ``r >= 1`` the level (and slope, curvature, ...)
freed by differencing is anchored by one constraint set per difference
order ``d < r``: the sum of the order-``d`` differences over the set is
zero.  Anchoring is applied by linear reconstruction, so sampling never
rejects and constrained coefficient vectors are exact linear images of
the differenced process.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, build_basis, constraint_projection, difference_matrix
from .errors import ConstraintError, GridError, LevelError, ParameterError
from .kernels import Kernel, cholesky_with_jitter, gram_matrix

__all__ = [
    "Constraint",
    "ref",
    "middle_ref",
    "time_ref",
    "sum_range",
    "sum_all",
    "SmoothingModel",
    "sample",
    "log_density",
    "conditional_projection",
    "reparametrize_rw",
    "rw_reconstruct",
]

CONSTRAINT_TOL = 1e-8


@dataclass(frozen=True)
class Constraint:
    """Index set over which order-``d`` differences must sum to zero.

    ``kind`` is one of:

    - ``'ref'``: a single coefficient index (1-based); ``index='middle'``
      resolves to ``ceil(K / 2)``.
    - ``'time_ref'``: a single index named by its time point (identity
      bases only; resolved against the grid).
    - ``'range'``: indices ``start .. stop`` inclusive, 1-based;
      ``stop=None`` means K.
    """

    kind: str
    index: int | str | None = None
    time: float | None = None
    start: int = 1
    stop: int | None = None

    def resolve(self, K: int, d: int, times=None) -> np.ndarray:
        """1-based coefficient indices for difference order ``d``.

        Valid indices run from ``d + 1`` to ``K``: the order-``d``
        difference at index k ends at coefficient k.
        """
        lo = d + 1
        if self.kind == "ref":
            k = int(np.ceil(K / 2)) if self.index == "middle" else int(self.index)
            idx = np.array([k])
        elif self.kind == "time_ref":
            if times is None:
                raise ConstraintError(
                    f"time-referenced constraint at t={self.time} needs a time grid to resolve"
                )
            times = np.asarray(times, dtype=float)
            hits = np.nonzero(np.isclose(times, self.time))[0]
            if hits.size != 1:
                raise ConstraintError(f"constraint time {self.time} not found on the grid")
            idx = np.array([hits[0] + 1])
        elif self.kind == "range":
            stop = K if self.stop is None else int(self.stop)
            idx = np.arange(int(self.start), stop + 1)
        else:
            raise ConstraintError(f"unknown constraint kind '{self.kind}'")
        if idx.size == 0:
            raise ConstraintError(f"constraint set for d={d} is empty")
        if idx.min() < lo or idx.max() > K:
            raise ConstraintError(
                f"constraint indices {idx.min()}..{idx.max()} invalid for d={d}, K={K}"
            )
        return idx


def ref(index: int) -> Constraint:
    """Pin the order-d difference ending at one coefficient index."""
    return Constraint("ref", index=index)


def middle_ref() -> Constraint:
    """Pin at the middle coefficient, ``ceil(K / 2)``."""
    return Constraint("ref", index="middle")


def time_ref(time: float) -> Constraint:
    """Pin at the coefficient whose grid time equals ``time`` (identity basis)."""
    return Constraint("time_ref", time=time)


def sum_range(start: int, stop: int | None = None) -> Constraint:
    """Differences over ``start..stop`` (1-based, inclusive) sum to zero."""
    return Constraint("range", start=start, stop=stop)


def sum_all() -> Constraint:
    """Differences over every valid index sum to zero."""
    return Constraint("range", start=1, stop=None)


@dataclass(frozen=True)
class SmoothingModel:
    """Basis, kernel, differencing order, and anchoring constraints.

    ``order`` is the number of differencing passes needed to make the
    coefficient process stationary (0 for directly stationary models).
    ``constraints[d]`` anchors difference order ``d``; there must be
    exactly ``order`` of them.
    """

    basis: BasisSpec
    kernel: Kernel
    order: int = 0
    constraints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.order < 0:
            raise ParameterError("differencing order must be >= 0")
        if len(self.constraints) != self.order:
            raise ConstraintError(
                f"order {self.order} needs exactly {self.order} constraint sets, "
                f"got {len(self.constraints)}"
            )

    def with_kernel(self, kernel: Kernel) -> "SmoothingModel":
        return SmoothingModel(self.basis, kernel, self.order, self.constraints)

    def coefficient_positions(self, times) -> np.ndarray:
        """Positions at which kernel lags between coefficients are measured.

        Identity bases place coefficients at the grid times; spline bases
        place them on a unit-spaced knot index grid.
        """
        times = np.asarray(times, dtype=float)
        if self.basis.is_identity:
            return times
        from .basis import n_basis_functions

        return np.arange(n_basis_functions(self.basis, times), dtype=float)


def _constraint_values(model: SmoothingModel, delta: np.ndarray, times=None) -> list:
    """(d, indices, value) for each constraint set."""
    K = delta.size
    out = []
    for d, constraint in enumerate(model.constraints):
        idx = constraint.resolve(K, d, times=times)
        if d == 0:
            vals = delta
        else:
            vals = difference_matrix(K, d) @ delta
        # order-d difference ending at coefficient k sits at row k - d
        out.append((d, idx, float(np.sum(vals[idx - 1 - d]))))
    return out


def constrained_map(model: SmoothingModel, K: int, times=None) -> np.ndarray:
    """Linear map A (K x (K - r)) with ``D_r A = I`` and all constraints zero.

    The minimum-norm right inverse of the difference matrix is corrected
    by an element of the difference operator's null space (polynomials of
    degree < r in the coefficient index) chosen so every constraint set
    evaluates to zero.
    """
    r = model.order
    if r == 0:
        return np.eye(K)
    if K <= r:
        raise ParameterError(f"need K > r (got K={K}, r={r})")
    D = difference_matrix(K, r)
    P = constraint_projection(D)
    # null-space basis: index powers 0 .. r-1
    k_idx = np.arange(K, dtype=float)
    N = np.vander(k_idx, N=r, increasing=True)

    def cvals(matrix):
        rows = []
        for d, constraint in enumerate(model.constraints):
            idx = constraint.resolve(K, d, times=times)
            if d == 0:
                diffed = matrix
            else:
                diffed = difference_matrix(K, d) @ matrix
            rows.append(diffed[idx - 1 - d].sum(axis=0))
        return np.array(rows)

    M = cvals(N)  # r x r
    CP = cvals(P)  # r x (K - r)
    try:
        B = np.linalg.solve(M, -CP)
    except np.linalg.LinAlgError:
        raise ConstraintError("constraint sets do not identify the anchored level(s)") from None
    return P + N @ B


def sample(model: SmoothingModel, times, rng_seed) -> tuple:
    """Draw ``(epsilon, delta)`` from the smoothing model over a grid.

    For ``r = 0`` the coefficients are a direct Gaussian draw.  For
    ``r >= 1`` the order-r differences are drawn from the stationary
    kernel and the coefficients rebuilt so every constraint set holds
    exactly.
    """
    rng = np.random.default_rng(rng_seed)
    times = np.asarray(times, dtype=float)
    B = build_basis(model.basis, times)
    K = B.shape[1]
    positions = model.coefficient_positions(times)
    if K <= model.order:
        raise ParameterError(f"grid too short: K={K} with r={model.order}")
    n_free = K - model.order
    if model.kernel.variance == 0:
        free = np.zeros(n_free)
    else:
        L = cholesky_with_jitter(
            gram_matrix(model.kernel, positions[:n_free]),
            model.kernel.variance,
            context="smoothing sample",
        )
        free = L @ rng.standard_normal(n_free)
    if model.order == 0:
        delta = free
    else:
        delta = constrained_map(model, K, times=times) @ free
    return B @ delta, delta


def _mvn_logpdf(x: np.ndarray, cov: np.ndarray, variance_scale: float) -> float:
    if variance_scale == 0:
        return 0.0 if float(np.max(np.abs(x), initial=0.0)) < 1e-12 else -np.inf
    L = cholesky_with_jitter(cov, variance_scale, context="smoothing density")
    z = np.linalg.solve(L, x)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (x.size * np.log(2 * np.pi) + logdet + z @ z))


def log_density(model: SmoothingModel, delta, times=None) -> float:
    """Log density of a coefficient vector under the smoothing model.

    Defined on the ``(K - r)``-dimensional differenced space, constants
    included.  The vector must satisfy the anchoring constraints within
    ``1e-8``; the anchored degrees of freedom carry no density.
    """
    delta = np.asarray(delta, dtype=float)
    K = delta.size
    for d, idx, value in _constraint_values(model, delta, times=times):
        if abs(value) > CONSTRAINT_TOL:
            raise ConstraintError(
                f"constraint violated at difference order {d} over indices "
                f"{idx.tolist()}: residual {value:.3e}"
            )
    if times is not None:
        positions = model.coefficient_positions(times)
    else:
        positions = np.arange(K, dtype=float)
    if model.order == 0:
        x = delta
    else:
        x = difference_matrix(K, model.order) @ delta
    cov = gram_matrix(model.kernel, positions[: K - model.order]) if model.kernel.variance > 0 else np.zeros((x.size, x.size))
    return _mvn_logpdf(x, cov, model.kernel.variance)


def _schur_conditional(kernel: Kernel, pos_obs, pos_new, observed) -> tuple:
    """Exact Gaussian conditional of the kernel process on new positions.

    Solved through an eigendecomposition with a relative cutoff so
    numerically rank-deficient kernels (dense squared-exponential grids)
    condition stably.
    """
    if kernel.variance == 0:
        n = len(pos_new)
        return np.zeros(n), np.zeros((n, n))
    full = gram_matrix(kernel, np.concatenate([pos_obs, pos_new]))
    n_obs = len(pos_obs)
    if n_obs == 0:
        return np.zeros(len(pos_new)), full
    S_oo = full[:n_obs, :n_obs]
    S_no = full[n_obs:, :n_obs]
    S_nn = full[n_obs:, n_obs:]
    w, V = np.linalg.eigh(S_oo)
    keep = w > w.max() * 1e-12
    Vk = V[:, keep]
    wk = w[keep]
    mean = S_no @ (Vk @ ((Vk.T @ observed) / wk))
    half = (S_no @ Vk) / np.sqrt(wk)
    cov = S_nn - half @ half.T
    return mean, cov


def _integration_map(order: int, tail: np.ndarray, horizon: int) -> tuple:
    """Affine map from future differences to future coefficients.

    ``tail`` holds the last ``order`` observed coefficients.  Returns
    (A, b) with ``delta_future = A @ gamma_future + b``.
    """

    def integrate(gamma):
        # binomial recursion: the order-r difference of each new value equals gamma
        signs = [(-1) ** (m + 1) * _binom(order, m) for m in range(1, order + 1)]
        hist = list(tail[::-1])  # hist[0] = most recent
        out = np.empty(horizon)
        for j in range(horizon):
            nxt = gamma[j] + sum(s * hist[m] for m, s in enumerate(signs))
            out[j] = nxt
            hist = [nxt] + hist[: order - 1]
        return out

    b = integrate(np.zeros(horizon))
    A = np.empty((horizon, horizon))
    for j in range(horizon):
        e = np.zeros(horizon)
        e[j] = 1.0
        A[:, j] = integrate(e) - b
    return A, b


def _binom(n: int, k: int) -> float:
    from math import comb

    return float(comb(n, k))


def conditional_projection(model: SmoothingModel, delta_obs, horizon: int, times=None) -> tuple:
    """Mean and covariance of future coefficients given observed ones.

    For ``r = 0`` this is the closed-form Gaussian conditional of the
    stationary process (for an AR(1) kernel the mean decays as
    ``rho**h`` from the last observed value).  For ``r >= 1`` the
    differenced process is conditioned and the coefficient levels are
    taken from the tail of ``delta_obs``.

    Parameters
    ----------
    delta_obs : array_like
        Coefficients on the observation window.
    horizon : int
        Number of future coefficients to project.
    times : array_like, optional
        Grid times for identity bases; defaults to a unit-spaced index
        grid.  Future positions continue the trailing spacing.
    """
    delta_obs = np.asarray(delta_obs, dtype=float)
    if horizon < 0:
        raise ParameterError("horizon must be >= 0")
    if horizon == 0:
        return np.zeros(0), np.zeros((0, 0))
    n_obs = delta_obs.size
    if model.order >= 1 and n_obs < model.order:
        raise LevelError(
            f"projection with r={model.order} needs at least {model.order} observed "
            f"coefficients to pin the level; got {n_obs}"
        )
    if times is not None:
        positions = np.asarray(times, dtype=float)
        if model.basis.is_identity and positions.size != n_obs:
            raise GridError("times and delta_obs lengths differ")
        if not model.basis.is_identity:
            positions = np.arange(n_obs, dtype=float)
    else:
        positions = np.arange(n_obs, dtype=float)
    spacing = positions[-1] - positions[-2] if n_obs >= 2 else 1.0
    future = positions[-1] + spacing * np.arange(1, horizon + 1) if n_obs else spacing * np.arange(1, horizon + 1)

    if model.order == 0:
        return _schur_conditional(model.kernel, positions, future, delta_obs)

    gamma_obs = difference_matrix(n_obs, model.order) @ delta_obs if n_obs > model.order else np.zeros(0)
    n_gamma = gamma_obs.size
    gamma_pos = spacing * np.arange(n_gamma + horizon, dtype=float)
    mean_g, cov_g = _schur_conditional(
        model.kernel, gamma_pos[:n_gamma], gamma_pos[n_gamma:], gamma_obs
    )
    A, b = _integration_map(model.order, delta_obs[-model.order:], horizon)
    return A @ mean_g + b, A @ cov_g @ A.T


def reparametrize_rw(delta_path, d: int) -> tuple:
    """Split a random-walk path into systematic level/trend and differences.

    For ``d = 1`` returns ``([mean], first differences)``; for ``d = 2``
    returns ``([mean, mean slope], second differences)``.  In both cases
    :func:`rw_reconstruct` rebuilds the path exactly.
    """
    delta_path = np.asarray(delta_path, dtype=float)
    K = delta_path.size
    if d not in (1, 2):
        raise ParameterError("reparametrization supports d in {1, 2}")
    if K < d + 1:
        raise ParameterError(f"path of length {K} too short for d={d}")
    D = difference_matrix(K, d)
    gamma = D @ delta_path
    resid = delta_path - constraint_projection(D) @ gamma  # lies in null(D)
    if d == 1:
        alpha = np.array([resid.mean()])
    else:
        k = np.arange(K, dtype=float)
        centered = k - k.mean()
        alpha = np.array([resid.mean(), float(resid @ centered / (centered @ centered))])
    return alpha, gamma


def rw_reconstruct(alpha, gamma, d: int) -> np.ndarray:
    """Inverse of :func:`reparametrize_rw`."""
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    K = gamma.size + d
    D = difference_matrix(K, d)
    base = constraint_projection(D) @ gamma
    if d == 1:
        return base + alpha[0]
    k = np.arange(K, dtype=float)
    return base + alpha[0] + alpha[1] * (k - k.mean())
