"""Hot inner loops, each with a numba and a pure-numpy implementation.

The backend is picked once at import from ``DRIFTCRB_BACKEND`` (``numba`` or
``numpy``; default ``numba`` when importable) and can be switched at runtime
with :func:`use_backend`. Both implementations must agree to rounding.
"""

from __future__ import annotations

import os
import warnings
from contextlib import contextmanager

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_REQUESTED = os.environ.get("DRIFTCRB_BACKEND", "numba").strip().lower()
if _REQUESTED not in ("numba", "numpy"):
    warnings.warn(f"unknown DRIFTCRB_BACKEND={_REQUESTED!r}; falling back to numpy")
    _REQUESTED = "numpy"
if _REQUESTED == "numba" and not HAVE_NUMBA:
    _REQUESTED = "numpy"

_backend = _REQUESTED


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextmanager
def use_backend(name: str):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


# ---------------------------------------------------------------- numpy

def _ar1_paths_np(u, rho, innov_sd, init_gain):
    out = np.empty_like(u)
    out[:, 0] = init_gain * innov_sd * u[:, 0]
    for n in range(1, u.shape[1]):
        out[:, n] = rho * out[:, n - 1] + innov_sd * u[:, n]
    return out


def _quantize_np(z, U0, U1, delta, n_levels):
    clips = int(np.count_nonzero((z < U0) | (z > U1)))
    idx = np.rint((np.clip(z, U0, U1) - U0) / delta)
    np.clip(idx, 0, n_levels - 1, out=idx)
    return U0 + idx * delta, clips


def _drift_corr_np(rho, s_ladder):
    N = s_ladder.shape[0]
    i = np.arange(N)
    lag = np.abs(i[:, None] - i[None, :])
    powers = rho ** np.arange(N, dtype=np.float64)
    return powers[lag] * s_ladder[np.minimum(i[:, None], i[None, :])]


def _m_matrix_np(y, eta, kappa, N):
    i = np.arange(N)
    lag = np.abs(i[:, None] - i[None, :])
    powers = y ** np.arange(2 * N, dtype=np.float64)
    lo = np.minimum(i[:, None], i[None, :])
    hi = np.maximum(i[:, None], i[None, :])
    upper_left = (i[:, None] + i[None, :]) < N - 1
    a = 1.0 + powers[2 * lo] * eta
    b = 1.0 + powers[2 * (N - 1 - hi)] * kappa
    return powers[lag] * np.where(upper_left, a, b)


# ---------------------------------------------------------------- numba

if HAVE_NUMBA:

    @njit(cache=True)
    def _ar1_paths_nb(u, rho, innov_sd, init_gain):
        B, N = u.shape
        out = np.empty_like(u)
        for b in range(B):
            sd = innov_sd[b]
            r = rho[b]
            d = init_gain[b] * sd * u[b, 0]
            out[b, 0] = d
            for n in range(1, N):
                d = r * d + sd * u[b, n]
                out[b, n] = d
        return out

    @njit(cache=True)
    def _quantize_nb(z, U0, U1, delta, n_levels):
        flat = z.ravel()
        out = np.empty(flat.shape[0])
        clips = 0
        top = n_levels - 1
        for k in range(flat.shape[0]):
            v = flat[k]
            if v < U0:
                v = U0
                clips += 1
            elif v > U1:
                v = U1
                clips += 1
            idx = np.rint((v - U0) / delta)
            if idx > top:
                idx = top
            elif idx < 0:
                idx = 0.0
            out[k] = U0 + idx * delta
        return out.reshape(z.shape), clips

    @njit(cache=True)
    def _drift_corr_nb(rho, s_ladder):
        N = s_ladder.shape[0]
        powers = np.empty(N)
        # direct powers keep one rounding per entry, like the numpy path; a running product would drift
        for k in range(N):
            powers[k] = rho ** k
        R = np.empty((N, N))
        for i in range(N):
            for j in range(i, N):
                v = powers[j - i] * s_ladder[i]
                R[i, j] = v
                R[j, i] = v
        return R

    @njit(cache=True)
    def _m_matrix_nb(y, eta, kappa, N):
        powers = np.empty(2 * N)
        for k in range(2 * N):
            powers[k] = y ** k
        M = np.empty((N, N))
        for i in range(N):
            for j in range(i, N):
                if i + j < N - 1:
                    scale = 1.0 + powers[2 * i] * eta
                else:
                    scale = 1.0 + powers[2 * (N - 1 - j)] * kappa
                v = powers[j - i] * scale
                M[i, j] = v
                M[j, i] = v
        return M


# ---------------------------------------------------------------- dispatch

def ar1_paths(u: np.ndarray, rho, innov_sd, init_gain) -> np.ndarray:
    """Run d[n] = rho*d[n-1] + sd*u[n] along the last axis of a (B, N) array.

    The first state is ``init_gain * sd * u[:, 0]``, which lets a caller encode
    any Gaussian initial condition whose variance is a multiple of the
    innovation variance.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    B = u.shape[0]
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (B,)).copy()
    innov_sd = np.broadcast_to(np.asarray(innov_sd, dtype=np.float64), (B,)).copy()
    init_gain = np.broadcast_to(np.asarray(init_gain, dtype=np.float64), (B,)).copy()
    if _backend == "numba":
        return _ar1_paths_nb(u, rho, innov_sd, init_gain)
    return _ar1_paths_np(u, rho, innov_sd, init_gain)


def quantize(z: np.ndarray, U0: float, U1: float, delta: float, n_levels: int):
    """Clip to [U0, U1] and round to the nearest of ``n_levels`` uniform levels."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    if _backend == "numba":
        return _quantize_nb(z, float(U0), float(U1), float(delta), int(n_levels))
    return _quantize_np(z, float(U0), float(U1), float(delta), int(n_levels))


def drift_corr(rho: float, s_ladder: np.ndarray) -> np.ndarray:
    s_ladder = np.ascontiguousarray(s_ladder, dtype=np.float64)
    if _backend == "numba":
        return _drift_corr_nb(float(rho), s_ladder)
    return _drift_corr_np(float(rho), s_ladder)


def m_matrix(y: float, eta: float, kappa: float, N: int) -> np.ndarray:
    if _backend == "numba":
        return _m_matrix_nb(float(y), float(eta), float(kappa), int(N))
    return _m_matrix_np(float(y), float(eta), float(kappa), int(N))
