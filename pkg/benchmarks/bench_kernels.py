"""Time the numba kernels against their numpy/scipy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once per backend (so numba compilation is not
counted), then timed ``--repeat`` times; the best time is reported.
"""

import argparse
import time

import numpy as np

from igwflow import kernels
from igwflow.dynamics import bandwidths


def _cases(rng):
    x200 = rng.standard_normal((200, 2))
    y200 = rng.standard_normal((200, 2))
    perm = rng.permutation(200)
    gram8 = np.einsum("ia,jb->ijab", rng.standard_normal((8, 2)), rng.standard_normal((8, 2))).reshape(8, 8, -1) / 8
    cost = rng.standard_normal((300, 300))
    x500 = rng.standard_normal((500, 2))
    w = np.full(200, 1 / 200)
    h = bandwidths()
    return [
        ("assignment 300x300", lambda: kernels.assignment(cost)),
        ("best_permutation n=8", lambda: kernels.best_permutation(gram8)),
        ("swap_polish n=200", lambda: kernels.swap_polish(x200, y200, perm)),
        ("coulomb_terms n=500", lambda: kernels.coulomb_terms(x500, 0.2)),
        ("nearest_neighbours n=500", lambda: kernels.nearest_neighbours(x500)),
        ("gaussian_kernel_sum n=200 + grad", lambda: kernels.gaussian_kernel_sum(x200, w, y200, w, h, want_grad=True)),
    ]


def _best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    cases = _cases(np.random.default_rng(args.seed))
    saved = kernels.USE_NUMBA
    print(f"{'kernel':36s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    try:
        for name, fn in cases:
            kernels.USE_NUMBA = True
            t_nb = _best_time(fn, args.repeat)
            kernels.USE_NUMBA = False
            t_np = _best_time(fn, args.repeat)
            print(f"{name:36s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.2f}")
    finally:
        kernels.USE_NUMBA = saved


if __name__ == "__main__":
    main()
