"""Observation generation, (quasi-)ML estimation and the Monte-Carlo harness.

Random numbers come from counter-based Philox streams keyed by the master
seed, one stream per (purpose, network, trial). A trial therefore sees the
same numbers no matter how trials are chunked or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .covariance import quantization_adjusted_params, s_ladder, solve_total_covariance
from .errors import DomainError, SingularCovariance
from .fisher import solve_fim
from .model import (
    INFINITY,
    DriftParams,
    NetworkSpec,
    SignalSpec,
    build_design_matrix,
    eval_signal,
    validate_drift_params,
)

PURPOSE_TRIAL = 1
PURPOSE_NETWORK = 2
DEFAULT_CHUNK = 256
MIN_TRIALS = 100


# ------------------------------------------------------------ RNG streams


class TrialStreams:
    """Independent generators addressed by (purpose, network, trial)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = np.random.SeedSequence(self.seed).generate_state(2, dtype=np.uint64)

    def generator(self, trial: int, network: int = 0, purpose: int = PURPOSE_TRIAL) -> np.random.Generator:
        # the low counter word advances as numbers are drawn; the others address the stream
        counter = np.array([0, purpose, network, trial], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def network_generator(self, network: int) -> np.random.Generator:
        return self.generator(0, network, PURPOSE_NETWORK)


# ------------------------------------------------------------ types


@dataclass(frozen=True)
class QuantizerSpec:
    U0: float
    U1: float
    bits: int

    def __post_init__(self):
        if not self.U1 > self.U0:
            raise DomainError("U1", f"need U1 > U0, got [{self.U0}, {self.U1}]")
        if int(self.bits) != self.bits or self.bits < 1:
            raise DomainError("bits", f"need an integer >= 1, got {self.bits}")

    @property
    def n_levels(self) -> int:
        return 2 ** int(self.bits)

    @property
    def delta(self) -> float:
        return (self.U1 - self.U0) / (self.n_levels - 1)

    @property
    def sigma2_Q(self) -> float:
        return self.delta ** 2 / 12.0

    def levels(self) -> np.ndarray:
        return self.U0 + self.delta * np.arange(self.n_levels)


@dataclass(frozen=True)
class ObservationSet:
    z: np.ndarray
    drift: np.ndarray
    noise: np.ndarray
    seed: int


@dataclass(frozen=True)
class MonteCarloResult:
    variance: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    trials: int
    seed: int
    bias_se: np.ndarray | None = None
    clip_rate: float = 0.0


@dataclass(frozen=True)
class MonteCarloConfig:
    sensors: Sequence[DriftParams]
    signal: SignalSpec
    N: int
    trials: int
    seed: int = 0
    quantizer: QuantizerSpec | None = None
    network_index: int = 0
    chunk: int = DEFAULT_CHUNK


# ------------------------------------------------------------ generation


def _init_gain(params: DriftParams) -> float:
    return math.sqrt(s_ladder(params.rho, params.tau, 1)[0])


def gen_drift_path(params: DriftParams, N: int, stream: np.random.Generator) -> np.ndarray:
    """Drift d_1..d_N for one sensor.

    A calibrated sensor starts from zero tau samples before the first
    observation and runs tau + N - 1 innovations; an uncalibrated one starts
    from the stationary distribution.
    """
    params = validate_drift_params(params)
    sd = math.sqrt(params.gamma * params.sigma2)
    if params.tau is INFINITY:
        u = stream.standard_normal((1, N))
        return _kernels.ar1_paths(u, params.rho, sd, 1.0 / math.sqrt(1.0 - params.rho ** 2))[0]
    steps = params.tau + N - 1
    u = stream.standard_normal((1, steps))
    return _kernels.ar1_paths(u, params.rho, sd, 1.0)[0, -N:]


def gen_observations(network: NetworkSpec | Sequence[DriftParams], signal: SignalSpec, N: int,
                     seed: int, tau=INFINITY) -> ObservationSet:
    """z[n, m] = x[n] + drift[n, m] + noise[n, m], sensors independent."""
    streams = TrialStreams(seed)
    if not isinstance(network, NetworkSpec):
        network = NetworkSpec(sensors=list(network))
    sensors = list(network.sensors)
    if not sensors:
        sensors = network.box.sample(streams.network_generator(0), network.size, tau)
    g = streams.generator(0)
    x = eval_signal(signal, N)
    drift = np.empty((N, len(sensors)))
    noise = np.empty((N, len(sensors)))
    for m, s in enumerate(sensors):
        drift[:, m] = gen_drift_path(s, N, g)
        noise[:, m] = math.sqrt(s.sigma2) * g.standard_normal(N)
    return ObservationSet(z=x[:, None] + drift + noise, drift=drift, noise=noise, seed=int(seed))


def uniform_quantize(z, spec: QuantizerSpec) -> tuple[np.ndarray, int]:
    """Clip to [U0, U1] and round to the nearest level; returns (values, clip count)."""
    data = z.z if isinstance(z, ObservationSet) else z
    return _kernels.quantize(np.asarray(data, dtype=np.float64), spec.U0, spec.U1, spec.delta, spec.n_levels)


# ------------------------------------------------------------ estimation


def _whitened_design(X: np.ndarray, cov) -> np.ndarray:
    if isinstance(cov, DriftParams):
        return solve_total_covariance(cov, X)
    try:
        return cho_solve(cho_factor(np.asarray(cov, dtype=np.float64), lower=True), X)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc


def ml_estimate(Z, X, covariances: Sequence) -> np.ndarray:
    """GLS/ML estimate from an N x M observation matrix.

    Each entry of ``covariances`` is a dense covariance matrix or a
    DriftParams (solved through the banded route). Passing quantization-
    adjusted parameters yields the quasi-ML estimate.
    """
    Xe = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[1] != len(covariances):
        raise DomainError("covariances", f"{len(covariances)} covariances for {Z.shape[1]} sensors")
    J = np.zeros((Xe.shape[1], Xe.shape[1]))
    rhs = np.zeros(Xe.shape[1])
    for m, cov in enumerate(covariances):
        W = _whitened_design(Xe, cov)
        J += Xe.T @ W
        rhs += W.T @ Z[:, m]
    return solve_fim(0.5 * (J + J.T), rhs)


# ------------------------------------------------------------ Monte-Carlo engine


@dataclass
class EstimatorSetup:
    """Precomputed pieces shared by every trial of one network."""

    sensors: list[DriftParams]
    x: np.ndarray
    beta: np.ndarray
    W: np.ndarray  # (M, N, P+1), working covariance applied to X
    J: np.ndarray
    rho: np.ndarray
    drift_sd: np.ndarray
    init_gain: np.ndarray
    noise_sd: np.ndarray
    quantizer: QuantizerSpec | None = None
    working: list[DriftParams] = field(default_factory=list)


def build_setup(sensors: Sequence[DriftParams], signal: SignalSpec, N: int,
                quantizer: QuantizerSpec | None = None) -> EstimatorSetup:
    sensors = [validate_drift_params(s) for s in sensors]
    P = signal.order
    X = build_design_matrix(N, P).entries
    if quantizer is None:
        working = sensors
    else:
        working = [quantization_adjusted_params(s, quantizer.sigma2_Q).params for s in sensors]
    W = np.stack([solve_total_covariance(w, X) for w in working])
    J = np.einsum("np,mnq->pq", X, W)
    return EstimatorSetup(
        sensors=sensors,
        x=eval_signal(signal, N),
        beta=np.asarray(signal.beta, dtype=np.float64),
        W=W,
        J=0.5 * (J + J.T),
        rho=np.array([s.rho for s in sensors]),
        drift_sd=np.array([math.sqrt(s.gamma * s.sigma2) for s in sensors]),
        init_gain=np.array([_init_gain(s) for s in sensors]),
        noise_sd=np.array([math.sqrt(s.sigma2) for s in sensors]),
        quantizer=quantizer,
        working=working,
    )


def trial_normals(streams: TrialStreams, network: int, first: int, count: int, M: int, N: int) -> np.ndarray:
    """Standard normals for trials first..first+count-1, shape (count, 2, M, N).

    Slot 0 drives the drift innovations, slot 1 the white noise. Taking the
    leading sensors or samples of a larger draw gives the draw for a smaller
    network or a shorter record, which lets studies share random numbers.
    """
    out = np.empty((count, 2, M, N))
    for t in range(count):
        out[t] = streams.generator(first + t, network).standard_normal((2, M, N))
    return out


def estimate_from_normals(setup: EstimatorSetup, u: np.ndarray) -> tuple[np.ndarray, int]:
    """Estimates for a (C, 2, M, N) block of normals; returns (C, P+1) and clip count."""
    C, _, M, N = u.shape
    if M != len(setup.sensors) or N != setup.x.shape[0]:
        raise DomainError("u", f"normals of shape {u.shape} do not match M={len(setup.sensors)}, N={setup.x.shape[0]}")
    drift = _kernels.ar1_paths(
        u[:, 0].reshape(C * M, N),
        np.tile(setup.rho, C),
        np.tile(setup.drift_sd, C),
        np.tile(setup.init_gain, C),
    ).reshape(C, M, N)
    z = setup.x[None, None, :] + drift + setup.noise_sd[None, :, None] * u[:, 1]
    clips = 0
    if setup.quantizer is not None:
        q = setup.quantizer
        z, clips = _kernels.quantize(z, q.U0, q.U1, q.delta, q.n_levels)
    rhs = np.einsum("cmn,mnp->pc", z, setup.W)
    return solve_fim(setup.J, rhs).T, clips


def chi2_interval(variance: np.ndarray, trials: int, level: float = 0.95):
    """Interval for a variance measured about a known mean (trials degrees of freedom)."""
    a = (1.0 - level) / 2.0
    lo = trials * variance / stats.chi2.ppf(1.0 - a, trials)
    hi = trials * variance / stats.chi2.ppf(a, trials)
    return lo, hi


def summarize(estimates: np.ndarray, beta: np.ndarray, seed: int, clips: int = 0,
              samples: int = 0) -> MonteCarloResult:
    T = estimates.shape[0]
    err = estimates - beta[None, :]
    variance = np.mean(err * err, axis=0)
    lo, hi = chi2_interval(variance, T)
    bias_se = err.std(axis=0, ddof=1) / math.sqrt(T)
    return MonteCarloResult(variance=variance, mean=estimates.mean(axis=0), ci_low=lo, ci_high=hi,
                            trials=T, seed=int(seed), bias_se=bias_se,
                            clip_rate=(clips / samples) if samples else 0.0)


def iter_chunks(trials: int, chunk: int) -> Iterator[tuple[int, int]]:
    for first in range(0, trials, chunk):
        yield first, min(chunk, trials - first)


def monte_carlo_variance(config: MonteCarloConfig) -> MonteCarloResult:
    """Empirical variance of the (quasi-)ML estimate about the true coefficients."""
    if config.trials < MIN_TRIALS:
        raise DomainError("trials", f"need at least {MIN_TRIALS} trials, got {config.trials}")
    setup = build_setup(config.sensors, config.signal, config.N, config.quantizer)
    streams = TrialStreams(config.seed)
    M = len(setup.sensors)
    estimates = np.empty((config.trials, setup.beta.shape[0]))
    clips = 0
    for first, count in iter_chunks(config.trials, config.chunk):
        u = trial_normals(streams, config.network_index, first, count, M, config.N)
        est, c = estimate_from_normals(setup, u)
        estimates[first:first + count] = est
        clips += c
    return summarize(estimates, setup.beta, config.seed, clips, config.trials * M * config.N)
