"""Time each hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from driftcrb import _kernels


def cases():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((25_600, 160))
    rho = rng.uniform(0.85, 0.95, u.shape[0])
    sd = rng.uniform(5.0, 20.0, u.shape[0])
    gain = np.ones(u.shape[0])
    z = rng.uniform(-100.0, 1300.0, (256, 5, 100))
    s = np.full(400, 1.0 / (1.0 - 0.9 ** 2))
    return {
        "ar1_paths 25600x160": lambda: _kernels.ar1_paths(u, rho, sd, gain),
        "quantize 256x5x100": lambda: _kernels.quantize(z, 0.0, 1200.0, 1200.0 / 63, 64),
        "drift_corr N=400": lambda: _kernels.drift_corr(0.9, s),
        "m_matrix N=400": lambda: _kernels.m_matrix(0.6, -0.1, 0.2, 400),
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for name, fn in cases().items():
        best = {}
        for b in backends:
            with _kernels.use_backend(b):
                fn()  # warm-up, includes JIT compilation
                best[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        speed = best["numpy"] / best["numba"] if "numba" in best else float("nan")
        print(f"{name:<24}" + "".join(f"{best[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>11.1f}x")


if __name__ == "__main__":
    main()
