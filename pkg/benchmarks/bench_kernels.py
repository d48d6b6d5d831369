#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the four hot kernels (convolution forward/backward, bilinear warp
forward/flow-gradient) on training-representative shapes and reports the
speedup, after checking that both backends agree numerically.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from motionforge._kernels import numpy_backend

try:
    from motionforge._kernels import _native as native_backend
except ImportError:
    native_backend = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def bench_case(name, make_args, run, repeats):
    args = make_args()
    ref = run(numpy_backend, *args)
    rows = []
    for backend_name, backend in (("numpy", numpy_backend),
                                  ("native", native_backend)):
        if backend is None:
            continue
        err = max_diff(ref, run(backend, *args))
        sec = timeit(lambda: run(backend, *args), repeats)
        rows.append((backend_name, sec, err))
    base = rows[0][1]
    print(f"\n{name}")
    for backend_name, sec, err in rows:
        print(f"  {backend_name:7s} {sec * 1e3:9.3f} ms   "
              f"x{base / sec:5.2f}   max|diff vs numpy| = {err:.2e}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    if native_backend is None:
        print("native backend not built; timing numpy fallback only")

    x = rng.standard_normal((36, 32, 32))
    w = rng.standard_normal((24, 36, 3, 3))
    b = rng.standard_normal(24)
    y = rng.standard_normal((24, 32, 32))
    bench_case(
        "conv2d forward 36ch -> 24ch, 32x32, 3x3",
        lambda: (x, w, b),
        lambda be, *a: be.conv2d_forward(*a, 1, 1),
        args.repeats,
    )
    bench_case(
        "conv2d backward (same shape)",
        lambda: (x, w, y),
        lambda be, *a: be.conv2d_backward(*a, 1, 1, True),
        args.repeats,
    )

    img = rng.uniform(0, 1, (3, 256, 256))
    u = rng.uniform(-6, 6, (256, 256))
    v = rng.uniform(-6, 6, (256, 256))
    gout = rng.standard_normal((3, 256, 256))
    bench_case(
        "bilinear warp 3ch 256x256",
        lambda: (img, u, v),
        lambda be, *a: be.warp_bilinear(*a, 1.0),
        args.repeats,
    )
    bench_case(
        "warp flow-gradient 3ch 256x256",
        lambda: (img, u, v, gout),
        lambda be, *a: be.warp_bilinear_grad_flow(*a, 1.0),
        args.repeats,
    )


if __name__ == "__main__":
    main()
