import math

import numpy as np
import pytest

from driftcrb.covariance import drift_covariance, quantization_adjusted_params, total_covariance
from driftcrb.errors import DomainError
from driftcrb.fisher import exact_crb_for
from driftcrb.model import INFINITY, DriftParams, SignalSpec, build_design_matrix, eval_signal
from driftcrb.simulate import (
    MonteCarloConfig,
    QuantizerSpec,
    TrialStreams,
    build_setup,
    chi2_interval,
    estimate_from_normals,
    gen_drift_path,
    gen_observations,
    ml_estimate,
    monte_carlo_variance,
    trial_normals,
    uniform_quantize,
)

PATHS = 100_000


def many_paths(params, N, count=PATHS, seed=7):
    g = np.random.default_rng(seed)
    return np.stack([gen_drift_path(params, N, g) for _ in range(count)])


# ------------------------------------------------------------ drift paths


def test_drift_free_path_is_zero():
    g = np.random.default_rng(0)
    assert not np.any(gen_drift_path(DriftParams(1, 0, 0.9, 3), 20, g))
    assert not np.any(gen_drift_path(DriftParams(1, 0, 0.5), 20, g))


def test_white_drift_variance():
    p = DriftParams(2.0, 0.5, 0.0, 1)
    d = many_paths(p, 3)[:, 1]
    target = p.gamma * p.sigma2
    se = target * math.sqrt(2 / (PATHS - 1))
    assert abs(d.var(ddof=1) - target) < 5 * se


def test_stationary_lag_one_correlation():
    d = many_paths(DriftParams(1.0, 1.0, 0.9), 2)
    r = np.corrcoef(d[:, 0], d[:, 1])[0, 1]
    se = (1 - 0.81) / math.sqrt(PATHS)
    assert abs(r - 0.9) < 5 * se


@pytest.mark.parametrize("params", [DriftParams(1.0, 1.0, 0.8, 2), DriftParams(1.0, 0.5, 1.0, 1),
                                    DriftParams(1.0, 1.0, 0.6)])
def test_path_covariance_matches_model(params):
    N = 6
    d = many_paths(params, N)
    emp = d.T @ d / PATHS
    target = params.gamma * params.sigma2 * drift_covariance(params, N).R
    # var of d_i d_j under a Gaussian model
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / PATHS)
    assert np.all(np.abs(emp - target) < 5 * se)


def test_path_rejects_uncalibrated_random_walk():
    with pytest.raises(Exception):
        gen_drift_path(DriftParams(1, 1, 1.0), 5, np.random.default_rng(0))


# ------------------------------------------------------------ observations


def test_vanishing_noise_gives_signal():
    sig = SignalSpec([3.0, -0.5])
    obs = gen_observations([DriftParams(1e-30, 0, 0.5)] * 2, sig, 12, seed=1)
    np.testing.assert_allclose(obs.z, np.tile(eval_signal(sig, 12)[:, None], (1, 2)), atol=1e-12)
    np.testing.assert_array_equal(obs.z, eval_signal(sig, 12)[:, None] + obs.drift + obs.noise)


def test_observations_deterministic():
    sensors = [DriftParams(1, 1, 0.9), DriftParams(2, 0.3, 1.0, 2)]
    a = gen_observations(sensors, SignalSpec([1.0, 2.0]), 30, seed=99)
    b = gen_observations(sensors, SignalSpec([1.0, 2.0]), 30, seed=99)
    c = gen_observations(sensors, SignalSpec([1.0, 2.0]), 30, seed=100)
    np.testing.assert_array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)


def test_generated_observations_independent_across_sensors():
    p = DriftParams(1.0, 1.0, 0.9)
    prods = []
    for seed in range(2000):
        obs = gen_observations([p, p], SignalSpec([0.0]), 50, seed=seed)
        e = obs.drift + obs.noise
        prods.append(e[:, 0] * e[:, 1])
    prods = np.concatenate(prods)
    # samples within a record are correlated, so compare against a wide band
    assert abs(prods.mean()) < 5 * prods.std() / math.sqrt(2000)


# ------------------------------------------------------------ quantizer


def test_quantizer_spacing():
    q = QuantizerSpec(0, 1200, 5)
    assert q.delta == pytest.approx(1200 / 31, rel=1e-15)
    assert q.sigma2_Q == pytest.approx(124.87, abs=5e-3)
    assert q.sigma2_Q == q.delta ** 2 / 12


def test_quantizer_levels_fixed_and_clip():
    q = QuantizerSpec(0, 1200, 5)
    lv = q.levels()
    out, clips = uniform_quantize(lv.copy(), q)
    np.testing.assert_array_equal(out, lv)
    assert clips == 0
    out, clips = uniform_quantize(np.array([1e9, -5.0, 20.0]), q)
    np.testing.assert_allclose(out, [1200, 0, q.delta])
    assert clips == 2


def test_quantizer_error_bounded_inside_range():
    q = QuantizerSpec(-3, 7, 6)
    z = np.random.default_rng(1).uniform(-3, 7, 10_000)
    out, _ = uniform_quantize(z, q)
    assert np.max(np.abs(out - z)) <= q.delta / 2 + 1e-12
    assert np.var(out - z) == pytest.approx(q.sigma2_Q, rel=0.05)


@pytest.mark.parametrize("U0, U1, bits", [(1, 1, 4), (2, 1, 4), (0, 1, 0), (0, 1, 2.5)])
def test_quantizer_rejects_bad_spec(U0, U1, bits):
    with pytest.raises(DomainError):
        QuantizerSpec(U0, U1, bits)


# ------------------------------------------------------------ ML estimate


def test_ml_noiseless_recovers_coefficients():
    beta = np.array([2.0, -0.3, 0.01])
    X = build_design_matrix(40, 2).entries
    Z = np.tile((X @ beta)[:, None], (1, 3))
    covs = [DriftParams(1, 1, 0.9), DriftParams(4, 0.2, 1.0, 2), total_covariance(DriftParams(1, 2, 0.5), 40).Sigma]
    np.testing.assert_allclose(ml_estimate(Z, X, covs), beta, rtol=1e-10, atol=1e-10)


def test_ml_white_constant_is_mean():
    Z = np.random.default_rng(2).normal(size=(25, 3))
    X = build_design_matrix(25, 0).entries
    est = ml_estimate(Z, X, [DriftParams(1, 0, 0.3)] * 3)
    assert est[0] == pytest.approx(Z.mean(), rel=1e-12)


def test_ml_residual_orthogonal():
    p = DriftParams(3.0, 1.0, 0.9, 4)
    obs = gen_observations([p], SignalSpec([1.0, 0.5]), 60, seed=5)
    X = build_design_matrix(60, 1).entries
    est = ml_estimate(obs.z, X, [p])
    S = total_covariance(p, 60).Sigma
    r = X.T @ np.linalg.solve(S, obs.z[:, 0] - X @ est)
    assert np.max(np.abs(r)) < 1e-8


def test_quasi_ml_without_distortion_is_ml():
    p = DriftParams(2.0, 0.7, 0.85)
    sig = SignalSpec([1.0, 0.2])
    plain = build_setup([p], sig, 50)
    assert quantization_adjusted_params(p, 0.0).params == p
    u = trial_normals(TrialStreams(4), 0, 0, 8, 1, 50)
    a, _ = estimate_from_normals(plain, u)
    b, _ = estimate_from_normals(build_setup([quantization_adjusted_params(p, 0.0).params], sig, 50), u)
    np.testing.assert_array_equal(a, b)


def test_ml_unbiased():
    p = DriftParams(1.0, 1.0, 0.9)
    res = monte_carlo_variance(MonteCarloConfig([p], SignalSpec([5.0, 0.1]), 100, 10_000, seed=11))
    assert np.all(np.abs(res.mean - [5.0, 0.1]) < 5 * res.bias_se)


def test_ml_sensor_count_mismatch():
    with pytest.raises(DomainError):
        ml_estimate(np.zeros((5, 2)), build_design_matrix(5, 0).entries, [DriftParams(1, 0, 0.5)])


# ------------------------------------------------------------ Monte-Carlo harness


def test_mc_awgn_interval():
    res = monte_carlo_variance(MonteCarloConfig([DriftParams(1, 0, 0.5)], SignalSpec([0.0]), 100, 10_000, seed=0))
    assert res.ci_low[0] <= 0.01 <= res.ci_high[0]
    assert res.ci_low[0] <= res.variance[0] <= res.ci_high[0]


def test_mc_matches_exact_bound():
    p = DriftParams(1.0, 1.0, 0.9)
    res = monte_carlo_variance(MonteCarloConfig([p], SignalSpec([0.0, 0.0]), 100, 10_000, seed=0))
    crb = exact_crb_for(p, 100, 1).diag
    assert np.all((res.ci_low <= crb) & (crb <= res.ci_high))


def test_mc_seeds_overlap():
    cfg = dict(sensors=[DriftParams(1.0, 1.0, 0.9)], signal=SignalSpec([0.0, 0.0]), N=100, trials=10_000)
    a = monte_carlo_variance(MonteCarloConfig(seed=1, **cfg))
    b = monte_carlo_variance(MonteCarloConfig(seed=2, **cfg))
    assert np.all((a.ci_low <= b.ci_high) & (b.ci_low <= a.ci_high))


def test_mc_rejects_few_trials():
    with pytest.raises(DomainError):
        monte_carlo_variance(MonteCarloConfig([DriftParams(1, 0, 0.5)], SignalSpec([0.0]), 10, 99))


def test_mc_chunk_invariant(backend):
    cfg = dict(sensors=[DriftParams(1.0, 1.0, 0.9, 3), DriftParams(2.0, 0.4, 1.0, 1)],
               signal=SignalSpec([1.0, 0.5]), N=40, trials=300, seed=8)
    a = monte_carlo_variance(MonteCarloConfig(chunk=1, **cfg))
    b = monte_carlo_variance(MonteCarloConfig(chunk=256, **cfg))
    np.testing.assert_array_equal(a.variance, b.variance)


def test_mc_quantized_counts_clips():
    q = QuantizerSpec(-1, 1, 3)
    res = monte_carlo_variance(MonteCarloConfig([DriftParams(1, 0, 0.5)], SignalSpec([0.0]), 20, 200, quantizer=q))
    assert 0.2 < res.clip_rate < 0.5  # P(|z| > 1) for a standard normal is 0.317


def test_calibrated_harness_matches_literal_recursion():
    # the harness starts calibrated drift from a collapsed state; both must share the model covariance
    p = DriftParams(1.0, 1.0, 0.8, 3)
    setup = build_setup([p], SignalSpec([0.0]), 5)
    u = trial_normals(TrialStreams(0), 0, 0, 50_000, 1, 5)
    u[:, 1] = 0
    from driftcrb import _kernels
    d = _kernels.ar1_paths(u[:, 0, 0], np.full(50_000, setup.rho[0]), np.full(50_000, setup.drift_sd[0]),
                           np.full(50_000, setup.init_gain[0]))
    target = drift_covariance(p, 5).R
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / 50_000)
    assert np.all(np.abs(d.T @ d / 50_000 - target) < 5 * se)


def test_chi2_interval_brackets():
    lo, hi = chi2_interval(np.array([2.0]), 1000)
    assert lo[0] < 2.0 < hi[0]
    assert hi[0] / lo[0] == pytest.approx(1.19, abs=0.01)
