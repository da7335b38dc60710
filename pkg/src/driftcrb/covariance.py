"""Drift correlation R, its tridiagonal inverse, and the total error covariance.

Variance ladder convention: with the drift reset to zero ``tau`` samples
before the first observation, ``Var(d_n) = gamma*sigma2 * S_n`` where
``S_n = sum_{j=0}^{n+tau-2} rho**(2j)``. This is the convention under which
the tridiagonal inverse returned by :func:`drift_precision_closed` is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from . import _kernels
from .errors import DomainError
from .model import INFINITY, DriftParams, TauLike, validate_drift_params


@dataclass(frozen=True)
class CovarianceSet:
    params: DriftParams
    N: int
    R: np.ndarray
    s_ladder: np.ndarray
    Sigma: np.ndarray | None = None


@dataclass(frozen=True)
class QuantizedParams:
    """Noise parameters seen by the quasi-ML estimator after uniform quantization."""

    sigma2_tilde: float
    gamma_tilde: float
    sigma2_Q: float
    base: DriftParams

    @property
    def params(self) -> DriftParams:
        return self.base.replace(sigma2=self.sigma2_tilde, gamma=self.gamma_tilde)


def _geometric_sum(r2: float, count: int | np.ndarray):
    """sum_{j=0}^{count-1} r2**j for 0 <= r2 <= 1, accurate near r2 = 1."""
    if r2 == 1.0:
        return np.asarray(count, dtype=np.float64)
    if r2 == 0.0:
        return np.where(np.asarray(count) > 0, 1.0, 0.0)
    log_r2 = math.log(r2)
    return np.expm1(np.asarray(count, dtype=np.float64) * log_r2) / math.expm1(log_r2)


def s_ladder(rho: float, tau: TauLike, N: int) -> np.ndarray:
    """Drift variances S_1..S_N in units of the innovation variance."""
    if tau is INFINITY:
        if rho >= 1.0:
            raise DomainError("rho", "stationary variance diverges for rho = 1")
        return np.full(N, 1.0 / (1.0 - rho * rho))
    n = np.arange(1, N + 1)
    return np.asarray(_geometric_sum(rho * rho, n + tau - 1), dtype=np.float64)


def varrho(rho: float, tau: TauLike) -> float:
    """rho**(2 tau) / (1 + rho**2 + ... + rho**(2 tau - 2)); zero when uncalibrated."""
    if tau is INFINITY:
        return 0.0
    if rho == 0.0:
        return 0.0
    if rho == 1.0:
        return 1.0 / tau
    return float(rho ** (2 * tau) / _geometric_sum(rho * rho, tau))


def _check(params: DriftParams, N: int) -> DriftParams:
    params = validate_drift_params(params)
    if N < 1:
        raise DomainError("N", f"need at least one sample, got {N}")
    return params


def drift_covariance(params: DriftParams, N: int) -> CovarianceSet:
    params = _check(params, N)
    s = s_ladder(params.rho, params.tau, N)
    R = _kernels.drift_corr(params.rho, s)
    return CovarianceSet(params=params, N=N, R=R, s_ladder=s)


def precision_bands(params: DriftParams, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the tridiagonal matrix R^{-1}."""
    params = _check(params, N)
    rho = params.rho
    if N == 1:
        return np.array([1.0 / s_ladder(rho, params.tau, 1)[0]]), np.empty(0)
    diag = np.full(N, 1.0 + rho * rho)
    diag[0] = 1.0 + varrho(rho, params.tau)
    diag[-1] = 1.0
    off = np.full(N - 1, -rho)
    return diag, off


def drift_precision_closed(params: DriftParams, N: int) -> np.ndarray:
    if N < 2:
        raise DomainError("N", f"closed-form precision needs N >= 2, got {N}")
    diag, off = precision_bands(params, N)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def total_covariance(params: DriftParams, N: int) -> CovarianceSet:
    cov = drift_covariance(params, N)
    p = cov.params
    Sigma = p.sigma2 * (np.eye(N) + p.gamma * cov.R)
    return CovarianceSet(params=p, N=N, R=cov.R, s_ladder=cov.s_ladder, Sigma=Sigma)


def solve_total_covariance(params: DriftParams, B: np.ndarray) -> np.ndarray:
    """Return Sigma^{-1} B in O(N) per column.

    Uses (I + gamma R)^{-1} = (T + gamma I)^{-1} T with T = R^{-1} tridiagonal,
    so no dense matrix is formed and nothing cancels.
    """
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    if vector:
        B = B[:, None]
    N = B.shape[0]
    params = _check(params, N)
    if params.gamma == 0.0:
        out = B / params.sigma2
        return out[:, 0] if vector else out
    diag, off = precision_bands(params, N)
    TB = diag[:, None] * B
    if N > 1:
        TB[:-1] += off[:, None] * B[1:]
        TB[1:] += off[:, None] * B[:-1]
    ab = np.zeros((2, N))
    ab[1] = diag + params.gamma
    if N > 1:
        ab[0, 1:] = off
    out = solveh_banded(ab, TB, lower=False, check_finite=False) / params.sigma2
    return out[:, 0] if vector else out


def quantization_adjusted_params(params: DriftParams, sigma2_Q: float) -> QuantizedParams:
    if sigma2_Q < 0:
        raise DomainError("sigma2_Q", f"quantization distortion must be nonnegative, got {sigma2_Q}")
    params = validate_drift_params(params)
    sigma2_tilde = params.sigma2 + sigma2_Q
    gamma_tilde = params.gamma / (1.0 + sigma2_Q / params.sigma2)
    return QuantizedParams(sigma2_tilde=sigma2_tilde, gamma_tilde=gamma_tilde,
                           sigma2_Q=float(sigma2_Q), base=params)
