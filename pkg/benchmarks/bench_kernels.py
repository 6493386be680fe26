"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--T 20]

Times three workloads on each backend, checks that both produce the same
iterates, and prints the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hiergame import kernels
from hiergame.game import make_benchmark
from hiergame.solver import EpochInputs, Streams, sfbf, theorem_gap_schedule, vrhgs


def _best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(T):
    chain = make_benchmark("hier-chain")
    duo = make_benchmark("quad-duopoly")
    pts = np.random.default_rng(0).uniform(-1, 1, (20_000, 2))
    inp = EpochInputs(chain.x0, np.zeros(chain.n), np.zeros(chain.n))
    sched = theorem_gap_schedule(T)
    return {
        "implicit_values (hier-chain, 2e4 points)":
            lambda b: kernels.implicit_values(chain, 0, pts, backend=b),
        "sfbf inner loop (hier-chain, K=500)":
            lambda b: sfbf(inp, 0.05, 0.05, 0.1, 0.0, 500, chain, Streams(1), backend=b)[0],
        f"vrhgs run (quad-duopoly, theorem_gap T={T})":
            lambda b: vrhgs(duo, sched, 1, backend=b, gap_problem=None).last_iterates,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--T", type=int, default=20)
    args = p.parse_args(argv)
    if not kernels.HAVE_COMPILED:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    print(f"{'workload':<46} {'python [s]':>11} {'compiled [s]':>13} {'speed-up':>9}  max |diff|")
    for name, fn in workloads(args.T).items():
        tp, op = _best_of(lambda: fn("python"), args.repeat)
        tc, oc = _best_of(lambda: fn("compiled"), args.repeat)
        diff = float(np.max(np.abs(np.asarray(op) - np.asarray(oc))))
        print(f"{name:<46} {tp:>11.4f} {tc:>13.4f} {tp / tc:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
