#!/usr/bin/env python3
"""Benchmark the numba convolution kernels against the numpy fallback.

Runs forward, weight-gradient, and input-gradient kernels over the shapes the
model actually produces (encoder dense layers, dual-branch convolutions,
masking pointwise convolutions) plus one large separator-scale case, and
prints per-kernel timings with the numba speedup.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The backend used by the package at runtime is chosen by PCNN_KERNELS
(auto/numba/numpy); this script imports both implementations directly, so it
works regardless of that setting.
"""

import argparse
import time

import numpy as np

from pcnn.kernels import reference

try:
    from pcnn.kernels import jit
except ImportError:
    jit = None

# name, input shape, weight shape, stride, dilation, padding, groups
CASES = [
    ("encoder dense L4 (1,3) d8", (32, 124, 64), (8, 32, 1, 3), (1, 1), (1, 8), (0, 8), 1),
    ("encoder downsample (1,3)", (8, 124, 64), (8, 8, 1, 3), (1, 2), (1, 1), (0, 1), 1),
    ("dual-branch 3x3 d2", (8, 124, 32), (8, 8, 3, 3), (1, 1), (2, 2), (2, 2), 1),
    ("fusion depthwise 3x3", (16, 124, 32), (16, 1, 3, 3), (1, 1), (1, 1), (1, 1), 16),
    ("masking 1x1", (8, 124, 32), (8, 8, 1, 1), (1, 1), (1, 1), (0, 0), 1),
    ("separator-scale 3x3", (64, 63, 256), (64, 64, 3, 3), (1, 1), (4, 4), (4, 4), 1),
]


def time_call(fn, repeats):
    fn()  # warm (and JIT-compile)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1000.0


def bench_case(name, x_shape, w_shape, stride, dilation, padding, groups, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=x_shape)
    w = rng.normal(size=w_shape)
    out = reference.conv2d_forward(x, w, stride, dilation, padding, groups)
    g = rng.normal(size=out.shape)

    kernels = {
        "forward": lambda mod: mod.conv2d_forward(x, w, stride, dilation, padding, groups),
        "grad_weight": lambda mod: mod.conv2d_backward_weight(
            g, x, w_shape, stride, dilation, padding, groups),
        "grad_input": lambda mod: mod.conv2d_backward_input(
            g, w, x_shape, stride, dilation, padding, groups),
    }
    print(f"\n{name}   x{x_shape} w{w_shape}")
    for label, call in kernels.items():
        t_np = time_call(lambda: call(reference), repeats)
        if jit is None:
            print(f"  {label:<12s} numpy {t_np:8.3f} ms   (numba unavailable)")
            continue
        t_nb = time_call(lambda: call(jit), repeats)
        np.testing.assert_allclose(call(jit), call(reference), rtol=1e-10, atol=1e-12)
        print(f"  {label:<12s} numpy {t_np:8.3f} ms   numba {t_nb:8.3f} ms   "
              f"speedup {t_np / t_nb:5.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    if jit is None:
        print("numba is not importable; timing the numpy fallback only")
    for case in CASES:
        bench_case(*case, repeats=args.repeats)


if __name__ == "__main__":
    main()
