#!/usr/bin/env python3
"""Benchmark the fly-out kernel: numba-compiled vs pure-Python fallback.

Times single fly-outs, full brute-force range sweeps, and the bisection
estimator. The compiled path is what ASA_NUMBA=1 (default) runs; the pure
path is what you get with ASA_NUMBA=0 or without numba installed.

Usage:
    python benchmarks/benchmark_wez.py
    python benchmarks/benchmark_wez.py --sweep-step 20 --output results.json
"""

import argparse
import json
import math
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from asa.engine.kernels import NUMBA_ENABLED, flyout_time, flyout_time_py
from asa.engine.wez import estimate_wez_max_range

WEAPON = {
    "launch_range_m": 10_000.0,
    "missile_speed_mps": 800.0,
    "missile_turn_rate_rad_s": 2.0,
    "hit_radius_m": 50.0,
    "max_flight_s": 10.0,
}


def time_fn(fn, repeats):
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def single_flyout(kernel, r0):
    return kernel(r0, 250.0, math.pi / 3, 800.0, 2.0, 50.0, 10.0, 0.1)


def sweep(kernel, step_m):
    best = -1.0
    r = 0.0
    while r <= 2.0 * WEAPON["launch_range_m"]:
        if kernel(r, 250.0, 0.0, 800.0, 2.0, 50.0, 10.0, 0.1) >= 0.0:
            best = r
        r += step_m
    return best


def main():
    parser = argparse.ArgumentParser(description="fly-out kernel benchmark")
    parser.add_argument("--repeats", type=int, default=20, help="repeats per timing")
    parser.add_argument("--sweep-step", type=float, default=10.0, help="range grid step (m)")
    parser.add_argument("--output", default=None, help="write results JSON here")
    args = parser.parse_args()

    print(f"numba compiled path active: {NUMBA_ENABLED}")
    if NUMBA_ENABLED:
        single_flyout(flyout_time, 8000.0)  # JIT warm-up outside the timings
    results = {"numba_enabled": NUMBA_ENABLED, "cases": []}

    rows = []
    for name, fn in (
        ("single fly-out 8 km", lambda k: single_flyout(k, 8000.0)),
        (f"range sweep @{args.sweep_step:g} m", lambda k: sweep(k, args.sweep_step)),
        ("bisection estimate", lambda k: None),
    ):
        if name == "bisection estimate":
            jit_t = time_fn(lambda: estimate_wez_max_range(250.0, 0.0, WEAPON), max(1, args.repeats // 4))
            py_t = None  # estimator always uses the configured kernel; see sweep rows
            rows.append((name, jit_t, py_t))
            results["cases"].append({"case": name, "active_path_s": jit_t})
            continue
        jit_t = time_fn(lambda: fn(flyout_time), args.repeats)
        py_t = time_fn(lambda: fn(flyout_time_py), max(1, args.repeats // 10))
        rows.append((name, jit_t, py_t))
        results["cases"].append(
            {"case": name, "compiled_s": jit_t, "pure_s": py_t, "speedup": py_t / jit_t if jit_t > 0 else None}
        )

    print(f"\n{'case':<24} {'compiled (s)':>14} {'pure (s)':>14} {'speedup':>9}")
    print("-" * 64)
    for name, jit_t, py_t in rows:
        if py_t is None:
            print(f"{name:<24} {jit_t:>14.6f} {'-':>14} {'-':>9}")
        else:
            print(f"{name:<24} {jit_t:>14.6f} {py_t:>14.6f} {py_t / jit_t:>8.1f}x")

    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)
        print(f"\nresults written to {args.output}")


if __name__ == "__main__":
    main()
