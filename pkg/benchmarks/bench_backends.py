"""Timing of the compiled convolution core against the numpy fallback.

Usage: python3 benchmarks/bench_backends.py [--cutoff K] [--repeat R]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from borelflow import _backend


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(cutoff: int, repeat: int) -> list[dict]:
    rng = np.random.default_rng(0)
    hw = (cutoff, cutoff, 0)
    M = (2 * cutoff + 1) ** 2
    rows = []
    for nodes in (2, 4, 32, 128):
        F = rng.standard_normal((6, M, nodes)) + 1j * rng.standard_normal((6, M, nodes))
        G = rng.standard_normal((6, M, nodes)) + 1j * rng.standard_normal((6, M, nodes))
        w = rng.random(nodes)
        py = _time(lambda: _backend.conv_weighted(F, G, w, hw, backend="python"), repeat)
        row = {"cutoff": cutoff, "nodes": nodes, "python_s": py}
        if _backend.BACKEND == "compiled":
            c = _time(lambda: _backend.conv_weighted(F, G, w, hw, backend="compiled"), repeat)
            ref = _backend.conv_weighted(F, G, w, hw, backend="python")
            got = _backend.conv_weighted(F, G, w, hw, backend="compiled")
            row.update(compiled_s=c, speedup=py / c,
                       max_rel_diff=float(np.abs(got - ref).max() / np.abs(ref).max()))
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cutoff", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"backend selected at import: {_backend.BACKEND}")
    for r in run(args.cutoff, args.repeat):
        line = f"K={r['cutoff']} nodes={r['nodes']:4d} python={r['python_s'] * 1e3:9.3f} ms"
        if "compiled_s" in r:
            line += (f"  compiled={r['compiled_s'] * 1e3:9.3f} ms  speedup={r['speedup']:6.2f}x"
                     f"  max_rel_diff={r['max_rel_diff']:.1e}")
        print(line)


if __name__ == "__main__":
    main()
