#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the three hot kernels at estimator-realistic shapes and one
end-to-end nested estimate under each backend, and checks both backends
agree numerically. Run from the repo root:

    python benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from eiglab import kernels
from eiglab.estimators import NmcConfig, nmc_eig
from eiglab.models import build_model
from eiglab.rng import RngStream

_SWAPPED = ("normal_logpdf_mat", "normal_logpdf_vec", "logmeanexp_2d",
            "logmeanexp_1d", "systematic_resample")


def _activate(backend) -> None:
    for name in _SWAPPED:
        setattr(kernels, name, getattr(backend, name))


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    backends = {"py": kernels.get_backend("py")}
    try:
        backends["c"] = kernels.get_backend("c")
    except ImportError:
        print("compiled kernels not built; showing the numpy fallback only")

    gen = np.random.default_rng(0)
    y = gen.standard_normal(4096)
    mu = gen.standard_normal((4096, 128))
    logw = gen.standard_normal((4096, 128))
    weights = gen.random(1 << 14)
    weights /= weights.sum()

    cases = {
        "normal_logpdf_mat (4096x128)": lambda b: b.normal_logpdf_mat(y, mu, 1.1),
        "logmeanexp_2d (4096x128)": lambda b: b.logmeanexp_2d(logw),
        "systematic_resample (16384)": lambda b: b.systematic_resample(weights, 0.37),
    }

    lg = build_model("lg")

    def end_to_end(backend):
        _activate(backend)
        try:
            return nmc_eig(lg, [1.0], NmcConfig(4096, 128), RngStream(1))
        finally:
            _activate(backends.get(kernels.backend_name(), backends["py"]))

    print(f"active default backend: {kernels.backend_name()}")
    header = f"{'kernel':<34}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, fn in cases.items():
        times = {name: _time(lambda b=b: fn(b), args.repeats) for name, b in backends.items()}
        row = f"{label:<34}" + "".join(f"{times[name] * 1e3:>10.3f}ms" for name in backends)
        if len(times) == 2:
            row += f"{times['py'] / times['c']:>9.2f}x"
        print(row)

    results = {}
    times = {}
    for name, backend in backends.items():
        times[name] = _time(lambda: end_to_end(backend), max(3, args.repeats // 2))
        results[name] = end_to_end(backend).value
    row = f"{'nmc_eig end-to-end (N=4096,M=128)':<34}" + "".join(
        f"{times[name] * 1e3:>10.1f}ms" for name in backends
    )
    if len(times) == 2:
        row += f"{times['py'] / times['c']:>9.2f}x"
    print(row)

    if len(results) == 2:
        gap = abs(results["py"] - results["c"])
        print(f"\nbackend agreement: |py - c| = {gap:.3e} on the end-to-end estimate")
        assert gap < 1e-9, "backends disagree beyond rounding"


if __name__ == "__main__":
    main()
