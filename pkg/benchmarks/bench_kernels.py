"""Time the numba and numpy paths of the hot kernels and check they agree.

The long sweep is division-bound, so both paths run at about the same
speed there; numba pays off on many short windows, where the numpy path
is dominated by per-call overhead.

    python benchmarks/bench_kernels.py [--r-max 10000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from pcrlab import _kernels
from pcrlab.spectrum import make_spectrum


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--r-max", type=int, default=10_000)
    ap.add_argument("--p-overlap", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if not _kernels.NUMBA_AVAILABLE:
        print("numba unavailable (or PCRLAB_DISABLE_NUMBA set); timing numpy only")

    vals = make_spectrum("polynomial", alpha=2.0, p=5 * args.r_max + 1).values
    U = np.linalg.qr(np.random.default_rng(0).standard_normal((args.p_overlap, args.p_overlap)))[0]
    small = make_spectrum("polynomial", alpha=2.0, p=256).values

    def windows(nb):
        # many short scans, as in the per-replicate gap-index search
        return [_kernels.gap_sums(small, d // 2, d, use_numba=nb) for d in range(2, 64) for _ in range(20)]

    cases = [
        ("gap_windows", lambda nb: [x for pair in windows(nb) for x in pair]),
        ("gap_sums", lambda nb: _kernels.gap_sums(vals, 2, args.r_max, use_numba=nb)),
        ("block_overlap", lambda nb: _kernels.block_overlap(U, 0, args.p_overlap // 2, use_numba=nb)),
    ]
    print(f"{'kernel':<14} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in cases:
        t_np, ref = best_of(lambda: fn(False), args.repeat)
        if not _kernels.NUMBA_AVAILABLE:
            print(f"{name:<14} {t_np:>10.4f}")
            continue
        fn(True)  # compile / load cache
        t_nb, got = best_of(lambda: fn(True), args.repeat)
        ref_arr, got_arr = np.hstack(ref), np.hstack(got)
        diff = float(np.nanmax(np.abs(got_arr - ref_arr) / np.maximum(np.abs(ref_arr), 1e-300)))
        print(f"{name:<14} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>8.1f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
