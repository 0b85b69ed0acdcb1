"""Stationary autocovariance kernels and Gram-matrix construction.

Every kernel is a function of the absolute distance between two time
points, ``s(t1, t2) = s*(|t1 - t2|)``, and decays to zero at large lags
(white noise is already zero off the diagonal).  Kernels are immutable
after construction and all operations here are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import ConditioningError, GridError, ParameterError

__all__ = [
    "Kernel",
    "AR1",
    "ARMA11",
    "SquaredExponential",
    "Matern",
    "WhiteNoise",
    "evaluate",
    "gram_matrix",
    "cholesky_with_jitter",
    "kernel_from_name",
]

# Diagonal jitter starts at 1e-10 * variance and escalates tenfold at most
# twice before a factorization is declared failed.
_JITTER_START = 1e-10
_JITTER_LIMIT = 1e-8


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterError(message)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


class Kernel:
    """Base class; subclasses carry a ``variance`` field (the lag-zero
    value) and implement ``at_lag`` for scalar or array lags."""

    variance: float

    def at_lag(self, lag):
        raise NotImplementedError

    def scaled(self, variance: float) -> "Kernel":
        """Return a copy of this kernel with the lag-zero variance replaced."""
        raise NotImplementedError


@dataclass(frozen=True)
class AR1(Kernel):
    """Autocovariance of a stationary first-order autoregression.

    ``s*(d) = variance * rho**d`` with ``0 <= rho < 1``.
    """

    variance: float
    rho: float

    def __post_init__(self):
        _require(_finite(self.variance, self.rho), "AR1 parameters must be finite")
        _require(self.variance >= 0, "AR1 variance must be nonnegative")
        _require(0 <= self.rho < 1, "AR1 rho must lie in [0, 1)")

    def at_lag(self, lag):
        lag = np.abs(np.asarray(lag, dtype=float))
        return self.variance * self.rho ** lag

    def scaled(self, variance):
        return AR1(variance, self.rho)


@dataclass(frozen=True)
class ARMA11(Kernel):
    """Autocovariance of a stationary ARMA(1,1) process.

    Parametrized by the stationary (lag zero) variance rather than the
    innovation variance, so all kernels are comparable at lag zero.  For
    the process ``x[t] = rho * x[t-1] + e[t] + theta * e[t-1]`` the
    autocorrelation at lag ``d >= 1`` is
    ``rho**(d-1) * (1 + rho*theta) * (rho + theta) / (1 + 2*rho*theta + theta**2)``.
    The moving-average parameter is restricted to ``[-1, 0]``.

    Lags are in units of the process step; non-integer lags are evaluated
    by continuous extension of the formula above.
    """

    variance: float
    rho: float
    theta: float

    def __post_init__(self):
        _require(
            _finite(self.variance, self.rho, self.theta),
            "ARMA11 parameters must be finite",
        )
        _require(self.variance >= 0, "ARMA11 variance must be nonnegative")
        _require(0 <= self.rho < 1, "ARMA11 rho must lie in [0, 1)")
        _require(-1 <= self.theta <= 0, "ARMA11 theta must lie in [-1, 0]")

    def _lag1_correlation(self) -> float:
        num = (1 + self.rho * self.theta) * (self.rho + self.theta)
        den = 1 + 2 * self.rho * self.theta + self.theta ** 2
        if den == 0:  # rho = 0, theta = -1 degenerate pair
            return 0.0
        return num / den

    def at_lag(self, lag):
        lag = np.abs(np.asarray(lag, dtype=float))
        corr1 = self._lag1_correlation()
        with np.errstate(divide="ignore"):
            tail = corr1 * self.rho ** np.maximum(lag - 1.0, 0.0)
        return self.variance * np.where(lag == 0, 1.0, tail)

    def scaled(self, variance):
        return ARMA11(variance, self.rho, self.theta)


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    """Squared-exponential kernel ``variance * exp(-d**2 / (2 * lengthscale**2))``."""

    variance: float
    lengthscale: float

    def __post_init__(self):
        _require(
            _finite(self.variance, self.lengthscale),
            "squared-exponential parameters must be finite",
        )
        _require(self.variance >= 0, "squared-exponential variance must be nonnegative")
        _require(self.lengthscale > 0, "squared-exponential lengthscale must be positive")

    def at_lag(self, lag):
        lag = np.asarray(lag, dtype=float)
        return self.variance * np.exp(-(lag ** 2) / (2 * self.lengthscale ** 2))

    def scaled(self, variance):
        return SquaredExponential(variance, self.lengthscale)


@dataclass(frozen=True)
class Matern(Kernel):
    """Matern kernel with smoothness ``nu`` and length scale ``lengthscale``.

    Closed forms are used for nu in {1/2, 3/2, 5/2}; any other positive
    nu is evaluated through the modified Bessel function of the second
    kind.
    """

    variance: float
    nu: float
    lengthscale: float

    def __post_init__(self):
        _require(
            _finite(self.variance, self.nu, self.lengthscale),
            "Matern parameters must be finite",
        )
        _require(self.variance >= 0, "Matern variance must be nonnegative")
        _require(self.nu > 0, "Matern nu must be positive")
        _require(self.lengthscale > 0, "Matern lengthscale must be positive")

    def at_lag(self, lag):
        d = np.abs(np.asarray(lag, dtype=float)) / self.lengthscale
        if self.nu == 0.5:
            corr = np.exp(-d)
        elif self.nu == 1.5:
            s = math.sqrt(3.0) * d
            corr = (1.0 + s) * np.exp(-s)
        elif self.nu == 2.5:
            s = math.sqrt(5.0) * d
            corr = (1.0 + s + s ** 2 / 3.0) * np.exp(-s)
        else:
            s = np.atleast_1d(math.sqrt(2.0 * self.nu) * d)
            corr = np.ones_like(s)
            nz = s > 0
            coef = 2.0 ** (1.0 - self.nu) / gamma_fn(self.nu)
            corr[nz] = coef * s[nz] ** self.nu * kv(self.nu, s[nz])
            corr = corr.reshape(d.shape)
        return self.variance * corr

    def scaled(self, variance):
        return Matern(variance, self.nu, self.lengthscale)


@dataclass(frozen=True)
class WhiteNoise(Kernel):
    """Independent noise: ``variance`` on the diagonal, zero elsewhere."""

    variance: float

    def __post_init__(self):
        _require(_finite(self.variance), "white-noise variance must be finite")
        _require(self.variance >= 0, "white-noise variance must be nonnegative")

    def at_lag(self, lag):
        lag = np.asarray(lag, dtype=float)
        return np.where(lag == 0, self.variance, 0.0)

    def scaled(self, variance):
        return WhiteNoise(variance)


def evaluate(kernel: Kernel, t1: float, t2: float) -> float:
    """Autocovariance between two time points, ``s*(|t1 - t2|)``."""
    if not _finite(t1, t2):
        raise ParameterError("time points must be finite")
    return float(kernel.at_lag(abs(t1 - t2)))


def gram_matrix(kernel: Kernel, times) -> np.ndarray:
    """Covariance matrix of a kernel over an increasing grid of times.

    Parameters
    ----------
    kernel : Kernel
        Stationary autocovariance function.
    times : array_like, shape (T,)
        Strictly increasing, finite time points.

    Returns
    -------
    numpy.ndarray, shape (T, T)
        Symmetric matrix with entry ``(i, j) = s*(|times[i] - times[j]|)``.
        The matrix is verified to admit a Cholesky factorization after at
        most ``1e-8 * variance`` of diagonal jitter; failure raises
        :class:`~tmmp.errors.ConditioningError`.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise GridError(f"invalid time grid of shape {np.shape(times)}")
    if not np.all(np.isfinite(times)):
        raise ParameterError("time grid must be finite")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ParameterError("time grid must be strictly increasing")
    lags = np.abs(times[:, None] - times[None, :])
    mat = np.asarray(kernel.at_lag(lags), dtype=float)
    mat = 0.5 * (mat + mat.T)
    cholesky_with_jitter(mat, kernel.variance, context=f"{type(kernel).__name__} over {times.size} times")
    return mat


def cholesky_with_jitter(matrix: np.ndarray, scale: float, context: str = "") -> np.ndarray:
    """Lower Cholesky factor, adding bounded diagonal jitter if needed.

    Jitter starts at ``1e-10 * scale`` and escalates tenfold up to
    ``1e-8 * scale``.  ``scale`` is normally the kernel's stationary
    variance; a zero scale falls back to an absolute jitter ladder so
    degenerate (all-zero) covariances still factor.
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    base = scale if scale > 0 else 1.0
    jitter = _JITTER_START * base
    eye = np.eye(matrix.shape[0])
    while jitter <= _JITTER_LIMIT * base * (1 + 1e-12):
        try:
            return np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10
    raise ConditioningError(
        f"Cholesky factorization failed beyond jitter budget ({context or 'matrix'})"
    )


_KERNELS_BY_NAME = {
    "ar1": (AR1, ("kappa2", "rho")),
    "arma11": (ARMA11, ("kappa2", "rho", "theta")),
    "squared_exponential": (SquaredExponential, ("kappa2", "ell")),
    "matern": (Matern, ("kappa2", "nu", "ell")),
    "white_noise": (WhiteNoise, ("sigma2",)),
}

# keyword used in spec files -> dataclass field, in declaration order
_FIELD_FOR_KEY = {
    "kappa2": "variance",
    "sigma2": "variance",
    "rho": "rho",
    "theta": "theta",
    "ell": "lengthscale",
    "nu": "nu",
}


def kernel_from_name(name: str, **params: float) -> Kernel:
    """Build a kernel from its spec-file keyword and key=value parameters.

    >>> kernel_from_name("matern", kappa2=0.05, nu=1.5, ell=3)
    Matern(variance=0.05, nu=1.5, lengthscale=3)
    """
    try:
        cls, keys = _KERNELS_BY_NAME[name]
    except KeyError:
        raise ParameterError(f"unknown kernel '{name}'") from None
    missing = [k for k in keys if k not in params]
    extra = [k for k in params if k not in keys]
    if missing or extra:
        raise ParameterError(
            f"kernel '{name}' takes parameters {keys}; "
            f"missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    return cls(**{_FIELD_FOR_KEY[k]: params[k] for k in keys})
