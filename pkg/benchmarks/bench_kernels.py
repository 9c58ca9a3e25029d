"""Throughput comparison between the pure NumPy stepper and the compiled
kernels.

Integrates a batch of independent paths for each builtin model and scheme
with both backends and reports steps per second plus the speedup.  Results
are also a cheap cross-check: endpoints from the two backends are compared
as they are produced.

Usage:
    python3 benchmarks/bench_kernels.py [--paths 200] [--steps 4096]
"""

import argparse
import time

import numpy as np

from taming_sde import (
    HAVE_COMPILED,
    SchemeKind,
    get_model,
    integrate_path,
    sample_path,
)

MODELS = ("poly5", "gbm", "diag2")
SCHEMES = (SchemeKind.EULER, SchemeKind.TAMED_EULER,
           SchemeKind.MILSTEIN, SchemeKind.TAMED_MILSTEIN)


def run_batch(model, scheme, grids, backend):
    start = time.perf_counter()
    endpoints = [integrate_path(scheme, model, g, backend=backend).endpoint
                 for g in grids]
    elapsed = time.perf_counter() - start
    return elapsed, np.stack(endpoints)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=200)
    parser.add_argument("--steps", type=int, default=4096)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not HAVE_COMPILED:
        print("compiled backend unavailable; timing the pure backend only")

    total_steps = args.paths * args.steps
    header = f"{'model':8s} {'scheme':16s} {'pure steps/s':>14s}"
    if HAVE_COMPILED:
        header += f" {'compiled steps/s':>18s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))

    for name in MODELS:
        model = get_model(name)
        grids = [sample_path(args.seed, i, args.steps, model.noise_dim,
                             model.horizon)
                 for i in range(args.paths)]
        for scheme in SCHEMES:
            pure_time, pure_ends = run_batch(model, scheme, grids, "pure")
            line = f"{name:8s} {scheme.value:16s} {total_steps / pure_time:14.3e}"
            if HAVE_COMPILED:
                fast_time, fast_ends = run_batch(model, scheme, grids,
                                                 "compiled")
                if not np.allclose(pure_ends, fast_ends,
                                   rtol=1e-9, atol=1e-12):
                    raise AssertionError(
                        f"backend mismatch for {scheme.value} on {name}")
                line += (f" {total_steps / fast_time:18.3e}"
                         f" {pure_time / fast_time:8.1f}x")
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
