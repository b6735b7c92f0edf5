"""Throughput of the compiled and pure-Python simulation kernels.

Usage::

    python3 benchmarks/bench_kmc.py [--N 5] [--time 2000] [--repeat 3]

Both kernels run the same seeded trajectory; the script checks that their
outputs agree bit for bit and reports events per second.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sipkit import kmc
from sipkit.model import perturbed_params


def run(backend: str, p, total_time: float, seed: int):
    start = time.perf_counter()
    est = kmc.run_simulation(p, total_time, burn_in=0.0, replicas=1, rng=kmc.RngStream(seed),
                             n_batches=20, backend=backend)
    return est, time.perf_counter() - start


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=5)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--time", type=float, default=2000.0, help="simulated time per run")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    p = perturbed_params(1.0, 2.0, args.eps, args.N, 1.0)
    results = {}
    for backend in kmc.available_backends():
        timings = []
        for _ in range(args.repeat):
            est, elapsed = run(backend, p, args.time, args.seed)
            timings.append(elapsed)
        best = min(timings)
        results[backend] = est
        print(f"{backend:>9}: {est.events:>9d} events  best {best:8.4f} s  {est.events / best:12.0f} events/s")

    if len(results) == 2:
        a, b = results["compiled"], results["python"]
        same = (
            a.events == b.events
            and np.array_equal(a.batch_densities, b.batch_densities)
            and np.array_equal(a.batch_currents, b.batch_currents)
            and np.array_equal(a.final_states, b.final_states)
        )
        print(f"bit-identical trajectories: {same}")
        return 0 if same else 1
    print("compiled kernel not built; only the Python kernel was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
