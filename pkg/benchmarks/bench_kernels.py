"""Compare the compiled and pure-numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py --size 64 --repeat 5

Reports the best-of-N wall time per call for each kernel and backend, checks
that both backends agree bit for bit, and optionally writes a JSON summary.
"""

from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from voxdiff.kernels import _pykernels
from voxdiff.postprocess import region_system

try:
    from voxdiff.kernels import _ckernels
except ImportError:
    _ckernels = None


def _cases(size: int, radius: int, seed: int):
    rng = np.random.default_rng(seed)
    vol = rng.random((size, size, size))
    g = np.indices((size, size, size)) - (size - 1) / 2.0
    ball = (g**2).sum(axis=0) <= (0.4 * size) ** 2
    system = region_system(ball)
    x = rng.standard_normal(system.size)
    return {
        f"box_sum3d r={radius} on {size}^3": lambda k: k.box_sum3d(vol, radius),
        f"laplacian_matvec n={system.size}": lambda k: k.laplacian_matvec(x, system.neighbors),
    }


def run(size: int, radius: int, repeat: int, number: int, seed: int) -> list[dict]:
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    rows = []
    for name, fn in _cases(size, radius, seed).items():
        results = {b: fn(k) for b, k in backends.items()}
        identical = all(np.array_equal(results["python"], r) for r in results.values())
        row = {"kernel": name, "bitwise_equal": identical}
        for b, k in backends.items():
            times = timeit.repeat(lambda: fn(k), repeat=repeat, number=number)
            row[f"{b}_ms"] = 1e3 * min(times) / number
        if "cython_ms" in row:
            row["speedup"] = row["python_ms"] / row["cython_ms"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write results to this file")
    args = p.parse_args(argv)

    rows = run(args.size, args.radius, args.repeat, args.number, args.seed)
    if _ckernels is None:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  equal")
    for r in rows:
        c = f"{r['cython_ms']:10.3f}" if "cython_ms" in r else f"{'-':>10s}"
        s = f"{r['speedup']:8.2f}" if "speedup" in r else f"{'-':>8s}"
        print(f"{r['kernel']:40s} {r['python_ms']:10.3f} {c} {s}  {r['bitwise_equal']}")
    if args.json:
        meta = {"python": platform.python_version(), "numpy": np.__version__, "args": vars(args)}
        with open(args.json, "w") as fh:
            json.dump({"meta": meta, "results": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
