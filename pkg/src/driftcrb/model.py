"""Domain types, validation and the polynomial design matrix."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, InfiniteCrb

MAX_CLOSED_FORM_ORDER = 6
# largest integer such that every smaller integer is exact in float64
_EXACT_INT_LIMIT = 2**53


class Tau(enum.Enum):
    """Sentinel for the uncalibrated (stationary-start) limit of calibration age."""

    INFINITY = "inf"

    def __repr__(self) -> str:
        return "INFINITY"

    def __str__(self) -> str:
        return "inf"


INFINITY = Tau.INFINITY

TauLike = Union[int, Tau]


def parse_tau(value) -> TauLike:
    """Accept an int, ``INFINITY``, ``float('inf')`` or the strings ``"inf"``/``"INFINITY"``."""
    if value is INFINITY:
        return INFINITY
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "u", "uncalibrated"):
            return INFINITY
        raise DomainError("tau", f"unrecognised calibration age {value!r}")
    if isinstance(value, float):
        if math.isinf(value) and value > 0:
            return INFINITY
        if not value.is_integer():
            raise DomainError("tau", f"must be an integer, got {value}")
        value = int(value)
    if isinstance(value, (bool, np.bool_)):
        raise DomainError("tau", "boolean is not a calibration age")
    if isinstance(value, (int, np.integer)):
        return int(value)
    raise DomainError("tau", f"unrecognised calibration age {value!r}")


def tau_label(tau: TauLike) -> str:
    return "inf" if tau is INFINITY else str(tau)


@dataclass(frozen=True)
class DriftParams:
    """Noise and drift description of one sensor.

    ``sigma2`` is the white-noise variance, ``gamma`` the ratio of drift
    innovation variance to ``sigma2``, ``rho`` the AR(1) coefficient and
    ``tau`` the number of samples since the last calibration (or ``INFINITY``).
    """

    sigma2: float
    gamma: float
    rho: float
    tau: TauLike = INFINITY

    @property
    def uncalibrated(self) -> bool:
        return self.tau is INFINITY

    @property
    def random_walk(self) -> bool:
        return self.rho == 1.0

    def replace(self, **changes) -> "DriftParams":
        values = dict(sigma2=self.sigma2, gamma=self.gamma, rho=self.rho, tau=self.tau)
        values.update(changes)
        return DriftParams(**values)


def validate_drift_params(raw: DriftParams) -> DriftParams:
    """Return ``raw`` unchanged if every invariant holds, otherwise raise."""
    for name in ("sigma2", "gamma", "rho"):
        value = getattr(raw, name)
        if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
            raise DomainError(name, f"must be a finite number, got {value!r}")
    if raw.sigma2 <= 0:
        raise DomainError("sigma2", f"white-noise variance must be positive, got {raw.sigma2}")
    if raw.gamma < 0:
        raise DomainError("gamma", f"drift strength must be nonnegative, got {raw.gamma}")
    if not 0.0 <= raw.rho <= 1.0:
        raise DomainError("rho", f"AR(1) coefficient must lie in [0, 1], got {raw.rho}")
    tau = parse_tau(raw.tau)
    if tau is not INFINITY and tau < 1:
        raise DomainError("tau", f"calibration age must be >= 1, got {tau}")
    if tau is INFINITY and raw.rho == 1.0:
        raise InfiniteCrb("random-walk drift (rho = 1) with an uncalibrated sensor has infinite CRB")
    if tau != raw.tau:
        return raw.replace(tau=tau)
    return raw


@dataclass(frozen=True)
class SignalSpec:
    """Polynomial signal x_n = sum_p beta[p] * n**p."""

    beta: tuple[float, ...]

    def __init__(self, beta: Sequence[float], order: int | None = None):
        beta = tuple(float(b) for b in beta)
        if order is not None and len(beta) != order + 1:
            raise DomainError("beta", f"expected {order + 1} coefficients for order {order}, got {len(beta)}")
        if not beta:
            raise DomainError("beta", "at least one coefficient is required")
        object.__setattr__(self, "beta", beta)

    @property
    def order(self) -> int:
        return len(self.beta) - 1


@dataclass(frozen=True)
class DesignMatrix:
    """Vandermonde matrix with entry (n, p) = n**p for n = 1..N."""

    n_samples: int
    order: int
    entries: np.ndarray = field(repr=False)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def build_design_matrix(N: int, P: int) -> DesignMatrix:
    if P < 0:
        raise DomainError("P", f"polynomial order must be >= 0, got {P}")
    if N < P + 1:
        raise DomainError("N", f"need N >= P + 1 = {P + 1} samples, got {N}")
    if P > 0 and float(N) ** P >= _EXACT_INT_LIMIT:
        raise DomainError("N", f"N**P = {N}**{P} is not exactly representable in float64")
    n = np.arange(1, N + 1, dtype=np.float64)
    entries = n[:, None] ** np.arange(P + 1, dtype=np.float64)[None, :]
    entries.setflags(write=False)
    return DesignMatrix(N, P, entries)


def eval_signal(spec: SignalSpec, N: int) -> np.ndarray:
    if N < 1:
        raise DomainError("N", f"need at least one sample, got {N}")
    n = np.arange(1, N + 1, dtype=np.float64)
    x = np.zeros(N)
    # Horner keeps integer-valued inputs exact
    for b in reversed(spec.beta):
        x = x * n + b
    return x


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned parameter ranges for drawing or averaging sensors."""

    rho: tuple[float, float]
    sigma2: tuple[float, float]
    gamma: tuple[float, float]

    def __post_init__(self):
        for name in ("rho", "sigma2", "gamma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(name, f"range lower bound {lo} exceeds upper bound {hi}")
        if self.sigma2[0] <= 0:
            raise DomainError("sigma2", "range must be strictly positive")
        if self.gamma[0] < 0:
            raise DomainError("gamma", "range must be nonnegative")
        if self.rho[0] < 0 or self.rho[1] > 1:
            raise DomainError("rho", "range must lie inside [0, 1]")

    def sample(self, rng: np.random.Generator, M: int, tau: TauLike) -> list[DriftParams]:
        """Draw M sensors uniformly from the box."""
        u = rng.random((M, 3))
        out = []
        for a, b, c in u:
            out.append(DriftParams(
                sigma2=self.sigma2[0] + a * (self.sigma2[1] - self.sigma2[0]),
                gamma=self.gamma[0] + b * (self.gamma[1] - self.gamma[0]),
                rho=self.rho[0] + c * (self.rho[1] - self.rho[0]),
                tau=tau,
            ))
        return out

    def spaced(self, M: int, tau: TauLike) -> list[DriftParams]:
        """M sensors with every parameter linearly spaced from lower to upper bound."""
        t = np.linspace(0.0, 1.0, M) if M > 1 else np.zeros(1)
        return [
            DriftParams(
                sigma2=float(self.sigma2[0] + s * (self.sigma2[1] - self.sigma2[0])),
                gamma=float(self.gamma[0] + s * (self.gamma[1] - self.gamma[0])),
                rho=float(self.rho[0] + s * (self.rho[1] - self.rho[0])),
                tau=tau,
            )
            for s in t
        ]


@dataclass(frozen=True)
class NetworkSpec:
    sensors: tuple[DriftParams, ...] = ()
    box: ParamBox | None = None
    size: int | None = None

    def __init__(self, sensors: Sequence[DriftParams] = (), box: ParamBox | None = None,
                 size: int | None = None):
        sensors = tuple(validate_drift_params(s) for s in sensors)
        if size is None:
            size = len(sensors)
        if size < 1:
            raise DomainError("sensors", "a network needs at least one sensor")
        if sensors and len(sensors) != size:
            raise DomainError("sensors", f"size {size} disagrees with {len(sensors)} listed sensors")
        if not sensors and box is None:
            raise DomainError("sensors", "either an explicit sensor list or a parameter box is required")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "size", size)

    @property
    def M(self) -> int:
        return self.size
