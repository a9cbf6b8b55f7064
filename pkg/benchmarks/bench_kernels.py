"""Compiled vs pure-Python packing kernels.

    python3 benchmarks/bench_kernels.py [--tasks 1000 4000 16000] [--repeat 5]

Both backends run on identical inputs; outputs are checked equal before timing
is reported. Exits non-zero if the extension is not built.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from hydrabroker import _kernels_py, kernels

try:
    from hydrabroker import _kernels as compiled
except ImportError:
    compiled = None

CAPACITY = (16, 4, 65536)


def workload(n, rng):
    return np.column_stack([rng.integers(1, 17, n), rng.integers(0, 5, n),
                            rng.integers(256, 65537, n)]).astype(np.int64)


def bench_pack(demand, impl, repeat):
    return min(timeit.repeat(lambda: kernels.first_fit_pack(demand, CAPACITY, impl=impl),
                             number=1, repeat=repeat))


def bench_place(demand, impl, repeat, nodes=64):
    order = np.arange(len(demand), dtype=np.int64)

    def once():
        free = np.tile(np.array(CAPACITY, dtype=np.int64), (nodes, 1))
        kernels.place_first_fit(free, demand, order, impl=impl)

    return min(timeit.repeat(once, number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", type=int, nargs="+", default=[1000, 4000, 16000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; run: pip install --no-build-isolation -e .",
              file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'tasks':>8}{'python ms':>12}{'compiled ms':>13}{'speedup':>9}")
    for n in args.tasks:
        demand = workload(n, rng)
        a = kernels.first_fit_pack(demand, CAPACITY, impl=_kernels_py)
        b = kernels.first_fit_pack(demand, CAPACITY, impl=compiled)
        if not np.array_equal(a, b):
            print(f"backends disagree on first_fit_pack at n={n}", file=sys.stderr)
            return 2
        for name, fn in (("first_fit_pack", bench_pack), ("place_first_fit", bench_place)):
            py, c = fn(demand, _kernels_py, args.repeat), fn(demand, compiled, args.repeat)
            print(f"{name:<16}{n:>8}{py * 1e3:>12.2f}{c * 1e3:>13.3f}{py / c:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
