"""Compiled vs numpy kernel timings on random inputs.

    python3 benchmarks/bench_kernels.py [--size 200000] [--repeat 5]

Prints one CSV row per kernel and backend plus the max abs difference between
backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bscloth.kernels import available_backends, get_backend


def inputs(size: int, rng: np.random.Generator) -> dict:
    pts = rng.normal(size=(4, size, 3))
    keys = rng.integers(0, size // 8, size)
    vals = rng.normal(size=(size, 3, 3))
    nb = size // 16
    order = rng.permutation(size)
    ptr = np.linspace(0, size, nb + 1).astype(np.int64)
    return {
        "classify_pt": (pts[0], pts[1], pts[2], pts[3]),
        "classify_ee": (pts[0], pts[1], pts[2], pts[3]),
        "accumulate_keyed": (keys, vals),
        "segment_sum": (vals, order, ptr),
    }


def best_of(fn, args, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def _parts(out) -> tuple:
    return out if isinstance(out, tuple) else (out,)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    data = inputs(args.size, np.random.default_rng(0))
    backends = available_backends()
    print("kernel,backend,best_ms,speedup_vs_python,max_abs_diff")
    for name, a in data.items():
        res = {}
        for b in backends:
            res[b] = best_of(getattr(get_backend(b), name), a, args.repeat)
        base_t, base_out = res["python"]
        for b in backends:
            t, out = res[b]
            diff = max(float(np.abs(np.asarray(x, float) - np.asarray(y, float)).max(initial=0.0))
                       for x, y in zip(_parts(out), _parts(base_out)))
            print(f"{name},{b},{1e3 * t:.2f},{base_t / t:.2f},{diff:.3e}")


if __name__ == "__main__":
    main()
