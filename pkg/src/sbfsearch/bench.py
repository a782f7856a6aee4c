"""Benchmark of the Monte Carlo kernels: numba @njit versus the pure
numpy fallback on identical pre-drawn inputs.

Run with `python -m sbfsearch.bench`. The first numba call per kernel is
a warmup so JIT compilation does not pollute the timings. Set
SBFSEARCH_PURE_NUMPY=1 to check which backend the package itself would
pick.
"""

from __future__ import annotations

import time

import numpy as np

from .kernels import ACTIVE_BACKEND, implementations

WORKLOADS = {
    # name: (builder, kernel key)
    "cover_hits (overlap trials)": ("cover", "cover_hits"),
    "max_occupancy (overflow trials)": ("occupancy", "max_occupancy"),
    "distinct_count (load oracle)": ("distinct", "distinct_count"),
}


def _build_inputs(kind: str, rng: np.random.Generator):
    if kind == "cover":
        trials, l, r, m, oe = 2000, 50, 6, 432, 20
        return (
            rng.integers(0, m, size=(trials, oe * r), dtype=np.int64),
            rng.integers(0, m, size=(trials, l, r), dtype=np.int64),
            m,
        )
    if kind == "occupancy":
        trials, m, balls = 50, 28854, 75_000
        return rng.integers(0, m, size=(trials, balls), dtype=np.int64), m
    trials, m, balls = 200, 432, 120
    return rng.integers(0, m, size=(trials, balls), dtype=np.int64), m


def _time(fn, args, repeats: int = 5) -> float:
    fn(*args)  # warmup (JIT compile and cache fill)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark() -> list[tuple[str, dict[str, float]]]:
    rng = np.random.default_rng(0)
    impls = implementations()
    results = []
    for label, (kind, key) in WORKLOADS.items():
        args = _build_inputs(kind, rng)
        timings = {name: _time(funcs[key], args) for name, funcs in impls.items()}
        outputs = {name: funcs[key](*args) for name, funcs in impls.items()}
        names = list(outputs)
        for other in names[1:]:
            assert np.array_equal(outputs[names[0]], outputs[other]), \
                f"backend mismatch on {label}"
        results.append((label, timings))
    return results


def main() -> int:
    print(f"active backend: {ACTIVE_BACKEND}")
    results = run_benchmark()
    width = max(len(label) for label, _ in results)
    for label, timings in results:
        parts = [f"{name}: {seconds * 1e3:8.2f} ms" for name, seconds in timings.items()]
        line = f"{label:<{width}}  " + "   ".join(parts)
        if "numba" in timings and "numpy" in timings:
            line += f"   speedup: {timings['numpy'] / timings['numba']:.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
