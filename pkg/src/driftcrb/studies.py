"""Sweep studies behind the CLI: N_epsilon maps, multi-sensor averages, quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .closed_form import closed_form_crb, effective_xi, fim_approx_crb, n_epsilon
from .covariance import quantization_adjusted_params
from .errors import DomainError, DriftCrbError
from .fisher import exact_crb_for
from .model import INFINITY, DriftParams, NetworkSpec, ParamBox, SignalSpec, TauLike, tau_label
from .simulate import (
    DEFAULT_CHUNK,
    MIN_TRIALS,
    QuantizerSpec,
    TrialStreams,
    build_setup,
    estimate_from_normals,
    iter_chunks,
    summarize,
    trial_normals,
)

# ------------------------------------------------------------ N_epsilon map


@dataclass(frozen=True)
class MreMapConfig:
    P: int
    rho: Sequence[float]
    gamma: Sequence[float]
    taus: Sequence[TauLike] = (INFINITY,)
    epsilon: float = 0.05
    variants: Sequence[str] = ("fim", "crb")
    N_max: int = 1 << 20


def mre_map(cfg: MreMapConfig) -> list[dict]:
    """One row per (tau, variant, rho, gamma); failed cells carry NaN and a reason."""
    rows = []
    for tau in cfg.taus:
        for variant in cfg.variants:
            for rho in cfg.rho:
                for gamma in cfg.gamma:
                    row = {"rho": float(rho), "gamma": float(gamma), "tau_mode": tau_label(tau),
                           "variant": variant, "N_epsilon": math.nan, "reason": ""}
                    try:
                        res = n_epsilon(DriftParams(1.0, float(gamma), float(rho), tau), cfg.P,
                                        cfg.epsilon, variant, cfg.N_max)
                    except DriftCrbError as exc:
                        row["reason"] = f"{type(exc).__name__}: {exc}"
                    else:
                        if res.N_epsilon is None:
                            row["reason"] = res.reason
                        else:
                            row["N_epsilon"] = res.N_epsilon
                    rows.append(row)
    return rows


# ------------------------------------------------------------ multi-sensor


@dataclass(frozen=True)
class MultisensorConfig:
    box: ParamBox
    signal: SignalSpec
    M_list: Sequence[int]
    N_list: Sequence[int]
    taus: Sequence[TauLike] = (1, INFINITY)
    networks: int = 200
    trials: int = 500
    seed: int = 0
    mode: str = "integral"
    chunk: int = DEFAULT_CHUNK


def _average_crb(cfg: MultisensorConfig, M: int, N: int, tau, drawn: list[list[DriftParams]]):
    P = cfg.signal.order
    if cfg.mode == "integral":
        xi = effective_xi(NetworkSpec(box=cfg.box, size=M), mode="integral", tau=tau)
        return fim_approx_crb(xi, N, P), closed_form_crb(xi, N, P).diag
    fim = np.mean([fim_approx_crb(effective_xi(s[:M]), N, P) for s in drawn], axis=0)
    closed = np.mean([closed_form_crb(effective_xi(s[:M]), N, P).diag for s in drawn], axis=0)
    return fim, closed


def multisensor_study(cfg: MultisensorConfig) -> list[dict]:
    """Average-CRB against Monte-Carlo variances over random networks.

    All cells share random numbers: each network draws parameters for the
    largest M and normals for the largest M and N, and smaller cells use the
    leading sensors and samples.
    """
    if cfg.trials < MIN_TRIALS:
        raise DomainError("trials", f"need at least {MIN_TRIALS} trials, got {cfg.trials}")
    if cfg.networks < 2:
        raise DomainError("networks", f"need at least 2 network draws, got {cfg.networks}")
    M_max, N_max = max(cfg.M_list), max(cfg.N_list)
    streams = TrialStreams(cfg.seed)
    P1 = cfg.signal.order + 1
    cells = [(tau, M, N) for tau in cfg.taus for M in cfg.M_list for N in cfg.N_list]
    variances = {cell: np.empty((cfg.networks, P1)) for cell in cells}
    drawn = {tau: [] for tau in cfg.taus}
    for net in range(cfg.networks):
        base = cfg.box.sample(streams.network_generator(net), M_max, INFINITY)
        setups = {}
        for tau in cfg.taus:
            sensors = [s.replace(tau=tau) for s in base]
            drawn[tau].append(sensors)
            for M in cfg.M_list:
                for N in cfg.N_list:
                    setups[(tau, M, N)] = build_setup(sensors[:M], cfg.signal, N)
        estimates = {cell: np.empty((cfg.trials, P1)) for cell in cells}
        for first, count in iter_chunks(cfg.trials, cfg.chunk):
            u = trial_normals(streams, net, first, count, M_max, N_max)
            for (tau, M, N), setup in setups.items():
                est, _ = estimate_from_normals(setup, u[:, :, :M, :N])
                estimates[(tau, M, N)][first:first + count] = est
        for cell in cells:
            variances[cell][net] = summarize(estimates[cell], setups[cell].beta, cfg.seed).variance
    rows = []
    for tau, M, N in cells:
        fim_crb, closed = _average_crb(cfg, M, N, tau, drawn[tau])
        v = variances[(tau, M, N)]
        lo, hi = np.percentile(v, [2.5, 97.5], axis=0)
        mean = v.mean(axis=0)
        for p in range(P1):
            rows.append({"M": M, "N": N, "tau_mode": tau_label(tau), "p": p,
                         "avg_crb": float(fim_crb[p]), "avg_crb_closed": float(closed[p]),
                         "mc_variance": float(mean[p]), "ci_low": float(lo[p]), "ci_high": float(hi[p]),
                         "networks": cfg.networks, "trials": cfg.trials})
    return rows


# ------------------------------------------------------------ quantization


@dataclass(frozen=True)
class QuantizedConfig:
    sensors: Sequence[DriftParams]
    signal: SignalSpec
    N: int
    U0: float
    U1: float
    bits: Sequence[int]
    trials: int = 10_000
    seed: int = 0
    chunk: int = DEFAULT_CHUNK


def quantized_study(cfg: QuantizedConfig) -> list[dict]:
    """Modified-CRB and quasi-ML variance per bit depth, plus a full-precision row.

    ``modified_crb`` is the exact bound under the adjusted noise parameters;
    ``modified_crb_closed`` is the closed form from summed constants.
    Every bit depth sees the same random numbers.
    """
    if cfg.trials < MIN_TRIALS:
        raise DomainError("trials", f"need at least {MIN_TRIALS} trials, got {cfg.trials}")
    P = cfg.signal.order
    M = len(cfg.sensors)
    variants = [(int(b), QuantizerSpec(cfg.U0, cfg.U1, int(b))) for b in cfg.bits] + [("inf", None)]
    setups = [build_setup(cfg.sensors, cfg.signal, cfg.N, q) for _, q in variants]
    estimates = [np.empty((cfg.trials, P + 1)) for _ in variants]
    clips = [0] * len(variants)
    streams = TrialStreams(cfg.seed)
    for first, count in iter_chunks(cfg.trials, cfg.chunk):
        u = trial_normals(streams, 0, first, count, M, cfg.N)
        for k, setup in enumerate(setups):
            est, c = estimate_from_normals(setup, u)
            estimates[k][first:first + count] = est
            clips[k] += c
    rows = []
    samples = cfg.trials * M * cfg.N
    for k, (bits, q) in enumerate(variants):
        s2q = 0.0 if q is None else q.sigma2_Q
        working = [quantization_adjusted_params(s, s2q).params for s in cfg.sensors]
        exact = exact_crb_for(working, cfg.N, P, method="banded").diag
        try:
            closed = closed_form_crb(working, cfg.N, P).diag
        except DriftCrbError:
            closed = np.full(P + 1, math.nan)
        mc = summarize(estimates[k], setups[k].beta, cfg.seed, clips[k], samples)
        for p in range(P + 1):
            rows.append({"bits": bits, "p": p, "sigma2_Q": s2q, "modified_crb": float(exact[p]),
                         "modified_crb_closed": float(closed[p]), "mc_variance": float(mc.variance[p]),
                         "ci_low": float(mc.ci_low[p]), "ci_high": float(mc.ci_high[p]),
                         "clip_rate": mc.clip_rate, "trials": cfg.trials})
    return rows
