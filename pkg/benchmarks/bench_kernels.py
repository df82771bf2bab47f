"""Compiled kernels against their numpy/Python fallbacks.

Run ``python benchmarks/bench_kernels.py``. Both variants are called
directly, so the ``IPMPLAN_NUMBA`` flag does not matter here. Each row
reports the best of several repeats after one warm-up call, and whether
the two outputs agree exactly.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ipmplan import kernels as K
from ipmplan.config import DEFAULTS


def best_of(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def case_project(rng):
    poly = np.cumsum(rng.normal(size=(400, 2)), axis=0)
    poly_s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poly, axis=0).T))])
    pts = rng.uniform(poly.min(), poly.max(), size=(400, 2))
    return "project_points 400x400", (pts, poly, poly_s), K._project_points_nb, K._project_points_py


def case_rect(rng):
    args = tuple(rng.uniform(-3, 3, size=3)) + (4.5, 2.0) + tuple(rng.uniform(-3, 3, size=3)) + (4.5, 2.0)
    return "rect_overlap", args, K._rect_overlap_nb, K._rect_overlap_py


def case_search(rng, layers):
    p = DEFAULTS
    stations = np.linspace(0.0, 10.0 * (layers - 1), layers)
    lo = np.zeros(layers)
    hi = np.full(layers, 15.0)
    args = (stations, lo, hi, hi.copy(), np.asarray(p.accels, float), p.t_h, p.c_v, p.w_a, p.w_v,
            p.r_v, p.r_t, p.max_iter, 8.0, 0.0)
    return f"search k={layers}", args, K._search_nb, K._search_py


def same(a, b) -> bool:
    if isinstance(a, tuple) and len(a) == 9:
        # search output: compare the used prefix of each buffer
        n, m = a[6], a[8]
        if (n, m) != (b[6], b[8]):
            return False
        return (all(np.array_equal(a[i][:n], b[i][:n]) for i in range(6))
                and np.array_equal(a[7][:m], b[7][:m]))
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    cases = [case_project(rng), case_rect(rng), case_search(rng, 10), case_search(rng, 20)]
    print(f"{'kernel':<24} {'numba ms':>10} {'python ms':>10} {'speedup':>8}  equal")
    for name, a, fast, slow in cases:
        tf = best_of(lambda: fast(*a), args.repeats)
        ts = best_of(lambda: slow(*a), args.repeats)
        eq = same(fast(*a), slow(*a))
        print(f"{name:<24} {tf * 1e3:10.3f} {ts * 1e3:10.3f} {ts / tf:8.1f}  {eq}")


if __name__ == "__main__":
    main()
