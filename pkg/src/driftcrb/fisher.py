"""Exact Fisher information and Cramer-Rao bounds by dense linear algebra.

These routines are the ground truth that every closed form is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covariance import solve_total_covariance, total_covariance
from .errors import SingularCovariance, SingularFim
from .model import DesignMatrix, DriftParams, NetworkSpec, build_design_matrix, validate_drift_params

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class FimExact:
    J: np.ndarray
    N: int
    P: int
    sensor_count: int


@dataclass(frozen=True)
class CrbExact:
    diag: np.ndarray
    J_inverse: np.ndarray
    condition: float


def _entries(X) -> np.ndarray:
    return X.entries if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)


def _symmetrize(J):
    return 0.5 * (J + J.T)


def exact_fim(X, sigmas: Sequence[np.ndarray]) -> FimExact:
    """J = X' (sum_m Sigma_m^{-1}) X, one Cholesky solve per sensor."""
    Xe = _entries(X)
    N, P1 = Xe.shape
    J = np.zeros((P1, P1))
    for Sigma in sigmas:
        if Sigma.shape != (N, N):
            raise ValueError(f"covariance shape {Sigma.shape} does not match N = {N}")
        try:
            factor = cho_factor(Sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance(str(exc)) from exc
        J += Xe.T @ cho_solve(factor, Xe)
    return FimExact(J=_symmetrize(J), N=N, P=P1 - 1, sensor_count=len(sigmas))


def exact_fim_banded(X, sensors: Iterable[DriftParams]) -> FimExact:
    """Same as :func:`exact_fim` but O(N) per sensor via the tridiagonal precision of R."""
    Xe = _entries(X)
    N, P1 = Xe.shape
    J = np.zeros((P1, P1))
    count = 0
    for params in sensors:
        J += Xe.T @ solve_total_covariance(params, Xe)
        count += 1
    return FimExact(J=_symmetrize(J), N=N, P=P1 - 1, sensor_count=count)


def network_fim(X, network: NetworkSpec | Sequence[DriftParams], N: int | None = None,
                method: str = "dense") -> FimExact:
    """Sum of per-sensor information, accumulated in sensor order."""
    sensors = network.sensors if isinstance(network, NetworkSpec) else tuple(network)
    if not sensors:
        raise ValueError("network_fim needs an explicit sensor list")
    Xe = _entries(X)
    if N is not None and Xe.shape[0] != N:
        raise ValueError(f"design matrix has {Xe.shape[0]} rows, expected N = {N}")
    if method == "banded":
        return exact_fim_banded(Xe, sensors)
    if method != "dense":
        raise ValueError(f"unknown method {method!r}")
    sigmas = [total_covariance(validate_drift_params(s), Xe.shape[0]).Sigma for s in sensors]
    return exact_fim(Xe, sigmas)


def _equilibrated_cholesky(J):
    d = np.sqrt(np.diag(J))
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise SingularFim("Fisher information has a nonpositive diagonal entry")
    scaled = J / d[:, None] / d[None, :]
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularFim(f"Fisher information condition number {cond:.3g} exceeds {CONDITION_LIMIT:g}")
    try:
        factor = cho_factor(scaled, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularFim(str(exc)) from exc
    return d, factor, cond


def solve_fim(J: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """J^{-1} rhs with diagonal equilibration; rhs may be (P+1,) or (P+1, k)."""
    d, factor, _ = _equilibrated_cholesky(J)
    rhs = np.asarray(rhs, dtype=np.float64)
    scaled = rhs / (d if rhs.ndim == 1 else d[:, None])
    out = cho_solve(factor, scaled)
    return out / (d if rhs.ndim == 1 else d[:, None])


def exact_crb(fim: FimExact | np.ndarray) -> CrbExact:
    """Diagonal of J^{-1}.

    J is rescaled to unit diagonal before factorization; the columns of a
    polynomial design span many orders of magnitude and the raw matrix would
    trip the condition limit long before the problem is actually ill-posed.
    """
    J = fim.J if isinstance(fim, FimExact) else np.asarray(fim, dtype=np.float64)
    d, factor, cond = _equilibrated_cholesky(J)
    inv_scaled = cho_solve(factor, np.eye(J.shape[0]))
    J_inv = _symmetrize(inv_scaled / d[:, None] / d[None, :])
    return CrbExact(diag=np.diag(J_inv).copy(), J_inverse=J_inv, condition=cond)


def exact_crb_for(sensors: DriftParams | Sequence[DriftParams], N: int, P: int,
                  method: str = "dense") -> CrbExact:
    """Convenience wrapper: build X, accumulate J over sensors, invert."""
    if isinstance(sensors, DriftParams):
        sensors = [sensors]
    X = build_design_matrix(N, P)
    return exact_crb(network_fim(X, list(sensors), N, method=method))
