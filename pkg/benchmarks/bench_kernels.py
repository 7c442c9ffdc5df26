#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Runs each hot kernel on representative inputs (256x256 patches, the size the
toolkit processes everywhere) plus one end-to-end pipeline configuration,
and prints per-backend timings with the speedup factor.

Usage: python benchmarks/bench_kernels.py [--repeats 7] [--size 256]
"""

import argparse
import time

import numpy as np

import histosim.kernels as K
from histosim.patch import Colorspace, Patch
from histosim.preprocess import apply_pipeline, parse_config


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def benchmark(size, repeats):
    rng = np.random.default_rng(0)
    img = rng.random((size, size))
    pair_a = Patch(rng.random((size, size, 3)), Colorspace.RGB)
    pair_b = Patch(rng.random((size, size, 3)), Colorspace.RGB)
    rows = (np.arange(size, dtype=float)[:, None] + rng.uniform(-3, 3, (size, size)))
    cols = (np.arange(size, dtype=float)[None, :] + rng.uniform(-3, 3, (size, size)))
    heavy_cfg = parse_config("1|gray|0|1|1|1")

    cases = {
        f"median_filter 3x3 ({size}^2)": lambda: K.median_filter(img, 3),
        f"clahe 8x8 tiles ({size}^2)": lambda: K.clahe(img),
        f"joint_histogram 64 bins ({size}^2)": lambda: K.joint_histogram(img, img, 64),
        f"bilinear_sample warp ({size}^2)": lambda: K.bilinear_sample(img, rows, cols),
        "apply_pipeline 1|gray|0|1|1|1": lambda: apply_pipeline(
            pair_a, pair_b, heavy_cfg
        ),
    }

    backends = K.available_backends()
    if "native" not in backends:
        print("compiled backend not built; run `pip install -e .` first")

    results = {}
    for backend in backends:
        K.set_backend(backend)
        for name, fn in cases.items():
            fn()  # warmup
            results[(name, backend)] = best_of(fn, repeats)

    width = max(len(name) for name in cases)
    header = f"{'kernel':<{width}}  " + "".join(f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in cases:
        line = f"{name:<{width}}  "
        for backend in backends:
            line += f"{results[(name, backend)] * 1e3:>14.3f}"
        if len(backends) == 2:
            ratio = results[(name, "numpy")] / results[(name, "native")]
            line += f"{ratio:>9.2f}x"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--size", type=int, default=256)
    args = parser.parse_args()
    benchmark(args.size, args.repeats)


if __name__ == "__main__":
    main()
