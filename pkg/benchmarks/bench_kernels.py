"""Compare the compiled and pure-Python quotient filter kernels.

    python benchmarks/bench_kernels.py [--n 200000] [--q 18] [--r 9]

Each kernel runs the same workload: bulk insert of n random fingerprints,
n point finds, a batch count, a full enumeration and n/4 deletes. Prints one
TSV row per (operation, kernel) with wall time and throughput, then the
speedup of the compiled kernel.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from qfmaplet import _backend


def workload(kernel_cls, fps: np.ndarray, q: int, r: int) -> dict[str, float]:
    n = len(fps)
    k = kernel_cls(q, r, 1 << q)
    times = {}
    vals = (fps & np.uint64(0xFF)).tolist()
    fl = fps.tolist()

    t = time.perf_counter()
    for f, v in zip(fl, vals):
        k.insert(f, v)
    times["insert"] = time.perf_counter() - t

    t = time.perf_counter()
    for f in fl:
        k.find(f)
    times["find"] = time.perf_counter() - t

    t = time.perf_counter()
    k.count_matches(fps)
    times["count_matches"] = time.perf_counter() - t

    t = time.perf_counter()
    k.enumerate()
    times["enumerate"] = time.perf_counter() - t

    t = time.perf_counter()
    for f in fl[: n // 4]:
        first, _ = k.find(f)
        k.delete(f, first)
    times["delete"] = time.perf_counter() - t
    return times


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--q", type=int, default=18)
    ap.add_argument("--r", type=int, default=9)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    if args.n > 0.95 * (1 << args.q):
        ap.error("n exceeds 95% of 2**q slots")
    if _backend.COMPILED_KERNEL is None:
        print("compiled kernel not built; install with `pip install -e .`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    fps = rng.integers(0, 1 << (args.q + args.r), size=args.n, dtype=np.uint64)
    results = {}
    for name, cls in (("compiled", _backend.COMPILED_KERNEL), ("python", _backend.PURE_KERNEL)):
        results[name] = workload(cls, fps, args.q, args.r)
    print("operation\tkernel\tseconds\tops_per_second")
    for op in results["compiled"]:
        for name in results:
            s = results[name][op]
            count = args.n // 4 if op == "delete" else args.n
            print(f"{op}\t{name}\t{s:.4f}\t{count / s:.0f}")
    print("operation\tspeedup")
    for op in results["compiled"]:
        print(f"{op}\t{results['python'][op] / results['compiled'][op]:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
