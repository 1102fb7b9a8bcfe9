"""Compare the compiled scheduling kernel against the pure-Python reference.

    python3 benchmarks/bench_kernel.py [--jobs 20000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from crossrouter import kernel


def workload(n: int, seed: int = 0, n_classes: int = 6):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0.0, n * 250.0, n))
    cls = rng.integers(0, n_classes, n).astype(np.int64)
    svc = rng.exponential(180.0, n)
    couple = np.ones((n_classes, n_classes), dtype=np.uint8)
    seg = (np.arange(n_classes) % 2).astype(np.int64)
    limit = np.zeros(n_classes, dtype=np.int64)
    holdoff = np.zeros(n_classes)
    return t, cls, svc, couple, seg, limit, holdoff


def best_of(fn, args, repeat: int) -> tuple[float, np.ndarray]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--jobs", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if kernel.serve_compiled is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    print(f"{'discipline':<10} {'slice_us':>8} {'python_s':>10} {'cython_s':>10} {'speedup':>8} identical")
    for name, disc in kernel.DISCIPLINES.items():
        for slice_us in (0.0, 10_000.0):
            base = workload(args.jobs) + (64, slice_us, disc)
            t_py, out_py = best_of(kernel.serve_python, base, args.repeat)
            t_cy, out_cy = best_of(kernel.serve_compiled, base, args.repeat)
            same = np.array_equal(out_py, out_cy, equal_nan=True)
            print(f"{name:<10} {slice_us:>8g} {t_py:>10.4f} {t_cy:>10.4f} {t_py / t_cy:>7.1f}x {same}")


if __name__ == "__main__":
    main()
