"""Structured approximate inverse of I + gamma*R.

For large N, ``(I + gamma R)^{-1} = I - nu*M + O(y**N)`` where ``M`` is built
from powers of a single scalar ``y < 1``. This module computes the scalars,
the matrix ``M`` (optionally split as ``I + M1 + eta*M2 + kappa*M3``) and
reports how fast the neglected residual decays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .covariance import drift_covariance, precision_bands, varrho
from .errors import DomainError, SingularCovariance
from .model import INFINITY, DriftParams, TauLike, parse_tau, validate_drift_params


@dataclass(frozen=True)
class DriftConstants:
    gamma: float
    rho: float
    tau: TauLike
    y: float
    nu: float
    kappa: float
    eta_tau: float
    varrho_tau: float
    gamma_tilde_rw: float | None = None

    @property
    def random_walk(self) -> bool:
        return self.rho == 1.0


@dataclass(frozen=True)
class ApproxPrecision:
    M: np.ndarray
    nu: float
    N: int
    parts: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


@dataclass(frozen=True)
class ResidualDiagnostics:
    max_abs_error: float
    y_power_ratio: float
    antidiagonal_ratio: float
    y: float
    N: int


def drift_constants(gamma: float, rho: float, tau: TauLike) -> DriftConstants:
    tau = parse_tau(tau)
    if gamma < 0:
        raise DomainError("gamma", f"must be nonnegative, got {gamma}")
    if not 0.0 < rho <= 1.0:
        raise DomainError("rho", f"closed forms need 0 < rho <= 1, got {rho}")
    if tau is not INFINITY and tau < 1:
        raise DomainError("tau", f"calibration age must be >= 1, got {tau}")
    vr = varrho(rho, tau)
    gt = math.sqrt(1.0 + 4.0 / gamma) if (rho == 1.0 and gamma > 0) else None

    if gamma == 0.0:
        # roots are rho and 1/rho; nu vanishes and M is irrelevant
        y = rho
        kappa = 0.0 if rho < 1.0 else 1.0
        if rho < 1.0:
            eta = (1.0 - y * y) / (1.0 - rho * y + vr * y / rho) - 1.0
        else:
            eta = -1.0
        return DriftConstants(gamma, rho, tau, y, 0.0, kappa, eta, vr, gt)

    # b - 2 written without cancellation; the larger root is safe, y is its reciprocal
    b_minus_2 = (gamma + (1.0 - rho) ** 2) / rho
    disc = b_minus_2 * (b_minus_2 + 4.0)
    y_big = 1.0 + 0.5 * (b_minus_2 + math.sqrt(disc))
    y = 1.0 / y_big
    one_minus_rho_y = 1.0 - rho * y
    # rho - y from gamma*y = (rho - y)(1 - rho*y), avoiding subtraction of close values
    rho_minus_y = gamma * y / one_minus_rho_y
    nu = y * gamma / (rho * (1.0 - y * y))
    kappa = y * rho_minus_y / one_minus_rho_y
    eta = y * (rho_minus_y - vr / rho) / (one_minus_rho_y + vr * y / rho)
    return DriftConstants(gamma, rho, tau, y, nu, kappa, eta, vr, gt)


def constants_for(params: DriftParams) -> DriftConstants:
    params = validate_drift_params(params)
    return drift_constants(params.gamma, params.rho, params.tau)


def build_M(constants: DriftConstants, N: int, with_parts: bool = False) -> ApproxPrecision:
    if N < 2:
        raise DomainError("N", f"M needs N >= 2, got {N}")
    c = constants
    M = _kernels.m_matrix(c.y, c.eta_tau, c.kappa, N)
    parts = None
    if with_parts:
        i = np.arange(N)
        lag = np.abs(i[:, None] - i[None, :])
        s = i[:, None] + i[None, :]
        powers = c.y ** np.arange(2 * N, dtype=np.float64)
        M1 = np.where(lag > 0, powers[lag], 0.0)
        M2 = np.where(s < N - 1, powers[s], 0.0)
        M3 = np.where(s >= N - 1, powers[np.clip(2 * (N - 1) - s, 0, None)], 0.0)
        parts = (M1, M2, M3)
    return ApproxPrecision(M=M, nu=c.nu, N=N, parts=parts)


def approx_precision(params: DriftParams, N: int) -> np.ndarray:
    """I - nu*M, the approximation to sigma2 * Sigma^{-1}."""
    c = constants_for(params)
    if c.nu == 0.0:
        return np.eye(N)
    return np.eye(N) - c.nu * build_M(c, N).M


def _antidiagonal_ratio(res_abs, N, band=1):
    i = np.arange(N)
    dist = np.abs(i[:, None] + i[None, :] - (N - 1))
    inside = dist <= band
    off = res_abs[~inside]
    top = res_abs[inside].max()
    if off.size == 0 or off.max() == 0:
        return math.inf
    return top / off.max()


def _residual_double(params: DriftParams, N: int) -> np.ndarray:
    R = drift_covariance(params, N).R
    A = np.eye(N) + params.gamma * R
    try:
        factor = cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    exact = cho_solve(factor, np.eye(N))
    return exact - approx_precision(params, N)


def _mp_constants(gamma, rho, tau):
    g = mpmath.mpf(gamma)
    r = mpmath.mpf(rho)
    b = (g + 1) / r + r
    y = (b - mpmath.sqrt(b * b - 4)) / 2
    if tau is INFINITY:
        vr = mpmath.mpf(0)
    else:
        vr = r ** (2 * tau) / mpmath.fsum(r ** (2 * j) for j in range(tau))
    nu = y * g / (r * (1 - y * y))
    kappa = y * (r - y) / (1 - r * y)
    eta = (1 - y * y) / (1 - r * y + vr * y / r) - 1
    return g, r, y, vr, nu, kappa, eta


def _residual_mp(params: DriftParams, N: int):
    """Residual (I + gamma R)^{-1} - (I - nu M) in extended precision.

    The exact inverse uses (I + gamma R)^{-1} = I - gamma A^{-1} with
    A = R^{-1} + gamma I tridiagonal; A^{-1} entries come from the standard
    continuant recurrences, so every entry is a product of positive terms.
    """
    y_float = constants_for(params).y
    digits = 40 + int(math.ceil(2 * N * max(-math.log10(y_float), 0.0)))
    with mpmath.workdps(digits):
        g, r, y, vr, nu, kappa, eta = _mp_constants(params.gamma, params.rho, params.tau)
        diag = [r * r + 1 + g] * N
        diag[0] = 1 + vr + g
        diag[-1] = 1 + g
        r2 = r * r
        theta = [mpmath.mpf(1), diag[0]]
        for i in range(1, N):
            theta.append(diag[i] * theta[i] - r2 * theta[i - 1])
        phi = [mpmath.mpf(0)] * (N + 2)
        phi[N + 1] = mpmath.mpf(1)
        phi[N] = diag[N - 1]
        for i in range(N - 1, 0, -1):
            phi[i] = diag[i - 1] * phi[i + 1] - r2 * phi[i + 2]
        rpow = [r ** k for k in range(N)]
        ypow = [y ** k for k in range(2 * N)]
        res = [[None] * N for _ in range(N)]
        for i in range(N):
            for j in range(i, N):
                # 1-based continuant indices: A^{-1}[i, j] = rho^(j-i) theta_{i} phi_{j+2} / theta_N
                ainv = rpow[j - i] * theta[i] * phi[j + 2] / theta[N]
                if i + j < N - 1:
                    m = ypow[j - i] * (1 + ypow[2 * i] * eta)
                else:
                    m = ypow[j - i] * (1 + ypow[2 * (N - 1 - j)] * kappa)
                v = nu * m - g * ainv
                res[i][j] = v
                res[j][i] = v
        ynp = y ** N
        absmax = max(abs(v) for row in res for v in row)
        ratio = absmax / ynp
        dist_in = []
        dist_out = []
        for i in range(N):
            for j in range(N):
                (dist_in if abs(i + j - (N - 1)) <= 1 else dist_out).append(abs(res[i][j]))
        anti = max(dist_in) / max(dist_out) if dist_out and max(dist_out) > 0 else mpmath.inf
        return float(absmax), float(ratio), float(anti)


def residual_diagnostics(params: DriftParams, N: int, precision: str = "double") -> ResidualDiagnostics:
    """Size and shape of the neglected residual of the approximate inverse.

    ``precision="double"`` inverts densely in float64, which cannot resolve
    residuals below roughly 1e-15. ``precision="mp"`` evaluates the exact
    inverse in extended precision with enough digits to resolve ``y**(2N)``.
    """
    params = validate_drift_params(params)
    c = constants_for(params)
    if params.gamma == 0.0:
        return ResidualDiagnostics(0.0, 0.0, math.inf, c.y, N)
    if precision == "double":
        res = np.abs(_residual_double(params, N))
        max_abs = float(res.max())
        ynp = c.y ** N
        ratio = max_abs / ynp if ynp > 0 else math.inf
        return ResidualDiagnostics(max_abs, ratio, _antidiagonal_ratio(res, N), c.y, N)
    if precision == "mp":
        max_abs, ratio, anti = _residual_mp(params, N)
        return ResidualDiagnostics(max_abs, ratio, anti, c.y, N)
    raise ValueError(f"unknown precision {precision!r}")
