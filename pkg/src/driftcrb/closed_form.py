"""Closed-form Fisher information and Cramer-Rao bounds.

Everything here is expressed through a handful of scalar constants
(``xi0`` .. ``xi6``) that summarise one sensor, or a whole network after
summation. Two regimes exist:

* ``STATIONARY`` (rho < 1): information grows like N and the bound is a
  Hilbert-matrix inverse with a 1/N correction.
* ``RANDOM_WALK`` (rho = 1, finite tau): the constant term saturates and the
  remaining coefficients behave like derivative estimation in drift-only noise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from math import comb
from typing import Sequence, Union

import numpy as np

from .approximation import DriftConstants, drift_constants
from .covariance import quantization_adjusted_params
from .errors import DomainError, InfiniteCrb, MixedRegime
from .model import (
    INFINITY,
    MAX_CLOSED_FORM_ORDER,
    DriftParams,
    NetworkSpec,
    ParamBox,
    TauLike,
    parse_tau,
    validate_drift_params,
)

GAUSS_LEGENDRE_NODES = 16
_TABLE_ALPHA_PAIRS = {(0, 0), (0, 1), (1, 0), (1, 1)}


class Regime(enum.Enum):
    STATIONARY = "stationary"
    RANDOM_WALK = "random_walk"


class Mode(enum.Enum):
    EXACT = "exact"
    CLOSED_SECOND_ORDER = "closed_second"
    CLOSED_FIRST_ORDER = "closed_first"


# ------------------------------------------------------------ power sums


@dataclass(frozen=True)
class PowerSumCoeffs:
    q: int
    coeffs: tuple[float, float, float, float]

    def evaluate(self, N: int) -> float:
        """Reconstruct sum_{n=1}^N n**q; exact for q <= 3.

        The power sum vanishes at N = 0, so terms of degree zero are dropped.
        """
        return sum(c * float(N) ** (self.q + 1 - i) for i, c in enumerate(self.coeffs) if i <= self.q)


def power_sum_coeffs(q: int) -> PowerSumCoeffs:
    if q < 0:
        raise DomainError("q", f"exponent must be >= 0, got {q}")
    coeffs = (1.0 / (q + 1), 0.5, q / 12.0, 0.0)
    return PowerSumCoeffs(q=q, coeffs=coeffs)


def polylog_closed(v: int, y: float) -> float:
    """sum_{i>=1} i**v * y**i for v <= 3."""
    if not 0.0 < y < 1.0:
        raise DomainError("y", f"series needs 0 < y < 1, got {y}")
    if v == 0:
        return y / (1.0 - y)
    if v == 1:
        return y / (1.0 - y) ** 2
    if v == 2:
        return y * (1.0 + y) / (1.0 - y) ** 3
    if v == 3:
        return y * (1.0 + 4.0 * y + y * y) / (1.0 - y) ** 4
    raise DomainError("v", f"closed forms are tabulated only for v <= 3, got {v}")


# ------------------------------------------------------------ X'MX constants


@dataclass(frozen=True)
class XtmxConstants:
    """Polynomial-in-N coefficients of [X'MX]_{k,l}.

    ``A[i]`` multiplies N**(k+l+1-i); ``alpha`` is the constant term, which
    carries the whole dependence on calibration age.
    """

    k: int
    l: int
    A: tuple[float, ...]
    alpha: float | None


def _pair_combs(k, l):
    return comb(k, 2) + comb(l, 2)


def _a_m1(i, k, l, Y):
    q = k + l
    c2 = _pair_combs(k, l)
    if i == 0:
        return 2.0 / (q + 1) * Y[0]
    if i == 1:
        return Y[0] - Y[1]
    if i == 2:
        return q / 6.0 * Y[0] - q / 2.0 * Y[1] + c2 / (q - 1) * Y[2]
    if i == 3:
        return -comb(q, 2) / 6.0 * Y[1] + c2 / 2.0 * Y[2] - (c2 - k * l / 2.0) / 3.0 * Y[3]
    raise DomainError("i", f"only i <= 3 is tabulated, got {i}")


def _a_m3_shifted(i, k, l, y):
    """A_{i-1, M3}: coefficient of N**(k+l+1-i) contributed by the bottom-right block."""
    q = k + l
    if i == 0:
        return 0.0
    if i == 1:
        return 1.0 / (1.0 - y) ** 2
    if i == 2:
        return -q * y / (1.0 - y) ** 3
    if i == 3:
        return y * ((1.0 + y) * _pair_combs(k, l) + k * l * y) / (1.0 - y) ** 4
    raise DomainError("i", f"only i <= 3 is tabulated, got {i}")


def _alpha_parts(k, l, y):
    if (k, l) == (0, 0):
        return -2.0 * y / (1 - y) ** 2, 1.0 / (1 - y) ** 2, 1.0 / (1 - y) ** 2
    if (k, l) in ((0, 1), (1, 0)):
        return -y / (1 - y) ** 2, 1.0 / (1 - y) ** 3, -y / (1 - y) ** 3
    if (k, l) == (1, 1):
        return 2.0 * y * y / (1 - y) ** 4, 1.0 / (1 - y) ** 4, y * y / (1 - y) ** 4
    raise DomainError("(k, l)", f"constant term tabulated only for {sorted(_TABLE_ALPHA_PAIRS)}, got {(k, l)}")


def xtmx_constants(k: int, l: int, constants: DriftConstants, with_alpha: bool = True) -> XtmxConstants:
    if not (0 <= k <= MAX_CLOSED_FORM_ORDER and 0 <= l <= MAX_CLOSED_FORM_ORDER):
        raise DomainError("(k, l)", f"indices must lie in [0, {MAX_CLOSED_FORM_ORDER}], got {(k, l)}")
    y, kappa, eta = constants.y, constants.kappa, constants.eta_tau
    Y = [polylog_closed(v, y) for v in range(4)]
    B = power_sum_coeffs(k + l).coeffs
    A = tuple(
        B[i] + _a_m1(i, k, l, Y) + kappa * _a_m3_shifted(i, k, l, y)
        for i in range(min(3, k + l) + 1)
    )
    alpha = None
    if with_alpha:
        a_m1, a_m2, a_m3 = _alpha_parts(k, l, y)
        alpha = a_m1 + eta * a_m2 + kappa * a_m3
    return XtmxConstants(k=k, l=l, A=A, alpha=alpha)


def alpha(k: int, l: int, c: DriftConstants) -> float:
    return xtmx_constants(k, l, c).alpha


# ------------------------------------------------------------ xi constants


@dataclass(frozen=True)
class XiConstants:
    """Scalars that determine the approximate FIM; each carries a 1/sigma2 factor."""

    regime: Regime
    xi0: float
    xi1: float
    xi2_tau: float
    xi3_tau: float | None = None
    xi4: float | None = None
    xi5: float | None = None
    xi6_tau: float | None = None

    def __add__(self, other: "XiConstants") -> "XiConstants":
        if self.regime is not other.regime:
            raise MixedRegime("cannot add constants from stationary and random-walk sensors")
        values = {}
        for f in fields(self):
            if f.name == "regime":
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            values[f.name] = None if a is None or b is None else a + b
        return XiConstants(regime=self.regime, **values)

    def scaled(self, factor: float) -> "XiConstants":
        values = {f.name: (None if getattr(self, f.name) is None else factor * getattr(self, f.name))
                  for f in fields(self) if f.name != "regime"}
        return XiConstants(regime=self.regime, **values)


def regime_of(params: DriftParams) -> Regime:
    # a drift-free sensor behaves as white noise whatever rho says
    if params.rho == 1.0 and params.gamma > 0:
        return Regime.RANDOM_WALK
    return Regime.STATIONARY


def xi0_from_nu(c: DriftConstants, sigma2: float) -> float:
    """Leading constant written through nu and y; equals the drift-scaling form."""
    return (1.0 - c.nu * (1.0 + c.y) / (1.0 - c.y)) / sigma2


def A1_constant(c: DriftConstants) -> float:
    y = c.y
    return (1.0 + 2.0 * c.kappa - 2.0 * y - y * y) / (2.0 * (1.0 - y) ** 2)


def xi_constants(params: DriftParams) -> XiConstants:
    params = validate_drift_params(params)
    s2 = params.sigma2
    if params.gamma == 0.0:
        return XiConstants(Regime.STATIONARY, 1.0 / s2, 0.5 / s2, -0.5 / s2)
    if params.rho == 0.0:
        raise DomainError("rho", "closed forms are undefined at rho = 0; use the exact pipeline")
    c = drift_constants(params.gamma, params.rho, params.tau)
    if params.rho < 1.0:
        xi0 = 1.0 / (s2 * (1.0 + params.gamma / (1.0 - params.rho) ** 2))
        xi1 = (0.5 - c.nu * A1_constant(c)) / s2
        xi2 = -xi1 - c.nu * alpha(0, 0, c) / s2
        return XiConstants(Regime.STATIONARY, xi0, xi1, xi2)
    gt = c.gamma_tilde_rw
    tau = params.tau
    xi2 = 1.0 / (s2 * (2.0 / (gt + 1.0)) * (1.0 + 2.0 * tau / (gt - 1.0)))
    xi3 = -c.nu * alpha(1, 0, c) / s2
    xi4 = 1.0 / (s2 * params.gamma)
    xi5 = -c.y ** 2 / ((1.0 - c.y) ** 3 * s2)
    xi6 = -xi5 - c.nu * alpha(1, 1, c) / s2
    return XiConstants(Regime.RANDOM_WALK, 0.0, 0.0, xi2, xi3, xi4, xi5, xi6)


# ------------------------------------------------------------ sources

Source = Union[DriftParams, Sequence[DriftParams], NetworkSpec, XiConstants]


def _sum_xi(sensors: Sequence[DriftParams]) -> XiConstants:
    total = None
    for s in sensors:
        xi = xi_constants(s)
        total = xi if total is None else total + xi
    if total is None:
        raise DomainError("sensors", "empty sensor list")
    return total


def _param_nodes(box: ParamBox, n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    weights = weights / 2.0
    out = []
    for lo, hi in (box.sigma2, box.gamma, box.rho):
        out.append((lo + (hi - lo) * (nodes + 1.0) / 2.0, weights))
    return out


def effective_xi(network: NetworkSpec | Sequence[DriftParams], mode: str = "sum",
                 tau: TauLike | None = None, sigma2_Q: float | None = None,
                 nodes: int = GAUSS_LEGENDRE_NODES) -> XiConstants:
    """Network constants: sum over sensors, or M times the box average.

    ``tau`` sets the calibration age for integral mode (default INFINITY).
    ``sigma2_Q`` substitutes quantization-adjusted noise parameters.
    """
    if not isinstance(network, NetworkSpec):
        network = NetworkSpec(sensors=list(network))

    def adjust(p: DriftParams) -> DriftParams:
        return p if sigma2_Q is None else quantization_adjusted_params(p, sigma2_Q).params

    mode = mode.lower()
    if mode == "sum":
        if not network.sensors:
            raise DomainError("sensors", "sum mode needs an explicit sensor list")
        return _sum_xi([adjust(s) for s in network.sensors])
    if mode != "integral":
        raise DomainError("mode", f"expected 'sum' or 'integral', got {mode!r}")
    box = network.box
    if box is None:
        raise DomainError("box", "integral mode needs a parameter box")
    if box.rho[0] < 1.0 <= box.rho[1] and box.gamma[1] > 0:
        raise MixedRegime("parameter box straddles rho < 1 and rho = 1")
    tau = INFINITY if tau is None else parse_tau(tau)
    (s_nodes, w), (g_nodes, _), (r_nodes, _) = _param_nodes(box, nodes)
    total = None
    for i, s2 in enumerate(s_nodes):
        for j, g in enumerate(g_nodes):
            for k, r in enumerate(r_nodes):
                xi = xi_constants(adjust(DriftParams(float(s2), float(g), float(r), tau)))
                xi = xi.scaled(w[i] * w[j] * w[k])
                total = xi if total is None else total + xi
    return total.scaled(float(network.size))


def _resolve_xi(source: Source) -> XiConstants:
    if isinstance(source, XiConstants):
        return source
    if isinstance(source, DriftParams):
        return xi_constants(source)
    if isinstance(source, NetworkSpec):
        if source.sensors:
            return _sum_xi(source.sensors)
        return effective_xi(source, mode="integral")
    return _sum_xi(list(source))


# ------------------------------------------------------------ perturbed Hilbert inverse


def hilbert_K(P: int, p: int) -> int:
    return ((P + p + 1) * comb(P + p, p) * comb(P, p)) ** 2


def hilbert_L(P: int, p: int) -> float:
    return ((P + 1) / (p + 1)) ** 2


def hilbert(n: int) -> np.ndarray:
    i = np.arange(n)
    return 1.0 / (i[:, None] + i[None, :] + 1.0)


def perturbed_hilbert_inverse_diag(c0: float, c1: float, c2: float, N: float, P: int) -> np.ndarray:
    """Diagonal of [c0 H + (c1 ee' + c2 ff')/N]^{-1} to first order in 1/N."""
    if c0 == 0:
        raise DomainError("c0", "leading coefficient must be nonzero")
    p = np.arange(P + 1)
    K = np.array([hilbert_K(P, q) for q in p], dtype=np.float64)
    L = np.array([hilbert_L(P, q) for q in p])
    return K / c0 * (1.0 / (2 * p + 1) - (c1 + c2 * L) / (N * c0))


# ------------------------------------------------------------ approximate FIM


@dataclass(frozen=True)
class FimParts:
    E: np.ndarray
    H: np.ndarray
    e: np.ndarray
    f: np.ndarray
    D: np.ndarray | None
    Q0: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray | None


def approx_fim(source: Source, N: int, P: int) -> tuple[np.ndarray, FimParts]:
    """Second-order approximate FIM, truncated after the 1/N (stationary)
    or 1/N**2 (random walk) correction."""
    if N < P + 1:
        raise DomainError("N", f"need N >= P + 1 = {P + 1}, got {N}")
    xi = _resolve_xi(source)
    E = np.diag(float(N) ** np.arange(P + 1))
    H = hilbert(P + 1)
    e = np.ones(P + 1)
    f = np.zeros(P + 1)
    f[0] = 1.0
    if xi.regime is Regime.STATIONARY:
        inner = xi.xi0 * H + (xi.xi1 * np.outer(e, e) + xi.xi2_tau * np.outer(f, f)) / N
        J = N * E @ inner @ E
        parts = FimParts(E, H, e, f, None, Q0=xi.xi0 * H,
                         Q1=xi.xi1 * np.outer(e, e) + xi.xi2_tau * np.outer(f, f), Q2=None)
        return J, parts
    inner = np.zeros((P + 1, P + 1))
    Q0 = np.zeros((P + 1, P + 1))
    Q1 = np.zeros((P + 1, P + 1))
    Q2 = np.zeros((P + 1, P + 1))
    Q0[0, 0] = xi.xi2_tau
    inner[0, 0] = xi.xi2_tau
    D = np.diag(np.arange(1, P + 1, dtype=np.float64))
    if P >= 1:
        inner[0, 1] = inner[1, 0] = xi.xi3_tau / N
        Q1[0, 1] = Q1[1, 0] = xi.xi3_tau
        eP = np.ones(P)
        fP = np.zeros(P)
        fP[0] = 1.0
        F = xi.xi5 * np.outer(eP, eP) + xi.xi6_tau * np.outer(fP, fP)
        lead = D @ (xi.xi4 * hilbert(P)) @ D
        corr = D @ F @ D
        inner[1:, 1:] = (lead + corr / N) / N
        Q1[1:, 1:] = lead
        Q2[1:, 1:] = corr
    J = E @ inner @ E
    return J, FimParts(E, H, e, f, D, Q0=Q0, Q1=Q1, Q2=Q2)


def fim_approx_crb(source: Source, N: int, P: int) -> np.ndarray:
    """Diagonal of the inverse of the truncated approximate FIM.

    May contain nonpositive entries when N is below the approximation region.
    """
    J, _ = approx_fim(source, N, P)
    d = np.sqrt(np.abs(np.diag(J)))
    d[d == 0] = 1.0
    try:
        inv = np.linalg.inv(J / d[:, None] / d[None, :])
    except np.linalg.LinAlgError:
        return np.full(P + 1, np.nan)
    return np.diag(inv) / d ** 2


# ------------------------------------------------------------ closed-form CRB


@dataclass(frozen=True)
class CrbReport:
    diag: np.ndarray
    mode: Mode
    epsilon: np.ndarray
    K: np.ndarray
    L: np.ndarray
    regime: Regime
    mre_vs_exact: float | None = None
    negative_variance: bool = False

    def with_mre(self, exact_diag) -> "CrbReport":
        return replace(self, mre_vs_exact=max_relative_error(exact_diag, self.diag))


def _stationary_terms(xi: XiConstants, N: float, P: int):
    p = np.arange(P + 1)
    K = np.array([hilbert_K(P, q) for q in p], dtype=np.float64)
    L = np.array([hilbert_L(P, q) for q in p])
    second = (xi.xi1 + xi.xi2_tau * L) / (N * xi.xi0)
    eps = np.abs((2 * p + 1) * second)
    return p, K, L, second, eps


def _random_walk_terms(xi: XiConstants, N: float, P: int):
    p = np.arange(P + 1)
    K = np.ones(P + 1)
    L = np.ones(P + 1)
    corr = np.zeros(P + 1)
    eps = np.zeros(P + 1)
    if P >= 1:
        corr[0] = P ** 2 * xi.xi3_tau ** 2 / (N * xi.xi2_tau * xi.xi4)
        eps[0] = abs(corr[0])
        for q in range(1, P + 1):
            K[q] = hilbert_K(P - 1, q - 1)
            L[q] = hilbert_L(P - 1, q - 1)
            xit = (xi.xi5 + (xi.xi6_tau - xi.xi3_tau ** 2 / xi.xi2_tau) * P ** 2 / q ** 2) / xi.xi4
            corr[q] = xit / N
            eps[q] = abs((2 * q - 1) * xit / N)
    return p, K, L, corr, eps


def _check_source_tau(source: Source):
    sensors = []
    if isinstance(source, DriftParams):
        sensors = [source]
    elif isinstance(source, NetworkSpec):
        sensors = list(source.sensors)
    elif not isinstance(source, XiConstants):
        sensors = list(source)
    for s in sensors:
        validate_drift_params(s)


def closed_form_crb(source: Source, N: int, P: int, order: str = "second") -> CrbReport:
    """Closed-form CRB diagonal with approximation-region diagnostics.

    ``order`` is ``"second"`` (with the 1/N correction) or ``"first"``.
    A nonpositive variance is flagged in the report, never clamped.
    """
    _check_source_tau(source)
    if order not in ("first", "second"):
        raise DomainError("order", f"expected 'first' or 'second', got {order!r}")
    xi = _resolve_xi(source)
    N = float(N)
    mode = Mode.CLOSED_SECOND_ORDER if order == "second" else Mode.CLOSED_FIRST_ORDER
    if xi.regime is Regime.STATIONARY:
        p, K, L, second, eps = _stationary_terms(xi, N, P)
        if P == 0 and order == "second":
            diag = np.array([1.0 / (xi.xi0 * N + xi.xi1 + xi.xi2_tau)])
        else:
            lead = K / (N ** (2 * p + 1) * xi.xi0)
            bracket = 1.0 / (2 * p + 1) - (second if order == "second" else 0.0)
            diag = lead * bracket
    else:
        p, K, L, corr, eps = _random_walk_terms(xi, N, P)
        diag = np.empty(P + 1)
        diag[0] = (1.0 + (corr[0] if order == "second" else 0.0)) / xi.xi2_tau
        for q in range(1, P + 1):
            lead = K[q] / (N ** (2 * q - 1) * q ** 2 * xi.xi4)
            diag[q] = lead * (1.0 / (2 * q - 1) - (corr[q] if order == "second" else 0.0))
    return CrbReport(diag=diag, mode=mode, epsilon=eps, K=K, L=L, regime=xi.regime,
                     negative_variance=bool(np.any(diag <= 0)))


def approximation_region(source: Source, N: int, P: int) -> np.ndarray:
    """Relative size of the second-order terms, per coefficient."""
    xi = _resolve_xi(source)
    if xi.regime is Regime.STATIONARY:
        return _stationary_terms(xi, float(N), P)[4]
    return _random_walk_terms(xi, float(N), P)[4]


def max_relative_error(exact_diag, approx_diag) -> float:
    exact = np.asarray(exact_diag, dtype=np.float64)
    approx = np.asarray(approx_diag, dtype=np.float64)
    if exact.shape != approx.shape:
        raise DomainError("approx_diag", f"shape {approx.shape} differs from {exact.shape}")
    if np.any(exact <= 0):
        raise DomainError("exact_diag", "exact variances must be positive")
    rel = np.abs(exact - approx) / exact
    if np.any(np.isnan(rel)):
        return math.inf
    return float(rel.max())


# ------------------------------------------------------------ N_epsilon search


@dataclass(frozen=True)
class NEpsilonResult:
    N_epsilon: int | None
    mre: float
    evaluations: int
    reason: str = ""


def mre_at(sensor: DriftParams, N: int, P: int, variant: str = "crb") -> float:
    from .fisher import exact_crb_for

    exact = exact_crb_for(sensor, N, P, method="banded").diag
    if variant == "crb":
        approx = closed_form_crb(sensor, N, P, "second").diag
    elif variant == "fim":
        approx = fim_approx_crb(sensor, N, P)
    else:
        raise DomainError("variant", f"expected 'crb' or 'fim', got {variant!r}")
    return max_relative_error(exact, approx)


def n_epsilon(sensor: DriftParams, P: int, epsilon: float = 0.05, variant: str = "crb",
              N_max: int = 1 << 22) -> NEpsilonResult:
    """Smallest N with MRE < epsilon: doubling from P + 2, then bisection."""
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon", f"must lie in (0, 1), got {epsilon}")
    sensor = validate_drift_params(sensor)
    evals = 0
    N = P + 2
    fail = None
    while True:
        m = mre_at(sensor, N, P, variant)
        evals += 1
        if m < epsilon:
            break
        fail = N
        if N >= N_max:
            return NEpsilonResult(None, m, evals, f"MRE {m:.3g} >= epsilon at N_max = {N_max}")
        N = min(2 * N, N_max)
    best, best_mre = N, m
    if fail is None:
        return NEpsilonResult(best, best_mre, evals)
    lo, hi = fail, N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        m = mre_at(sensor, mid, P, variant)
        evals += 1
        if m < epsilon:
            hi, best_mre = mid, m
        else:
            lo = mid
    return NEpsilonResult(hi, best_mre, evals)
