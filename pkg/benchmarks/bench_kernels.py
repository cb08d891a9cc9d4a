#!/usr/bin/env python3
"""Benchmark the compiled imaging kernels against the numpy fallback.

Runs each hot kernel at working resolution on both implementations and
prints per-op timings plus the speedup. The compiled module is imported
directly (not via the dispatch in shape2animal.imaging), so this also works
when S2A_NO_EXT is set.

Usage: python benchmarks/bench_kernels.py [--side 1024] [--repeats 5]
"""

import argparse
import time

import numpy as np

from shape2animal import _imaging_np
from shape2animal.imaging import gaussian_kernel1d

try:
    from shape2animal import _imaging_ext
except ImportError:
    _imaging_ext = None


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_cases(side, rng):
    gen = np.ascontiguousarray(rng.random((side, side, 3)))
    orig = np.ascontiguousarray(rng.random((side, side, 3)))
    soft = np.ascontiguousarray(rng.random((side, side)))
    binary = np.ascontiguousarray((soft < 0.4).astype(np.float64))
    binary_u8 = np.ascontiguousarray(binary.astype(np.uint8))
    other_u8 = np.ascontiguousarray((soft > 0.5).astype(np.uint8))
    half = np.ascontiguousarray(rng.random((side // 2, side // 2, 3)))
    raw = np.ascontiguousarray(rng.random((side, side)) * 37.0 + 2.0)
    kernel = gaussian_kernel1d(3.0)
    return [
        ("blend", lambda k: k.blend(gen, orig, binary, 0.5)),
        ("overlap_counts", lambda k: k.overlap_counts(binary_u8, other_u8)),
        ("threshold", lambda k: k.threshold(soft, 0.5)),
        ("resize_bilinear", lambda k: k.resize_bilinear(half, side, side)),
        ("rescale01", lambda k: k.rescale01(raw, 2.0, 39.0)),
        ("feather(sigma=3)", lambda k: k.convolve_separable(binary, kernel)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--side", type=int, default=1024,
                        help="square working resolution (default 1024)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="repeats per op; best time wins (default 5)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(args.side, rng)

    print(f"side={args.side}, repeats={args.repeats} (best-of timing)")
    header = f"{'kernel':<18} {'numpy':>10} {'compiled':>10} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = best_of(lambda: call(_imaging_np), args.repeats)
        if _imaging_ext is None:
            print(f"{name:<18} {t_np * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>9}")
            continue
        t_ext = best_of(lambda: call(_imaging_ext), args.repeats)
        print(f"{name:<18} {t_np * 1e3:>8.2f}ms {t_ext * 1e3:>8.2f}ms "
              f"{t_np / t_ext:>8.2f}x")
    if _imaging_ext is None:
        print("\ncompiled extension not built; showing numpy fallback only")


if __name__ == "__main__":
    main()
