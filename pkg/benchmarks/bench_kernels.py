"""Time the compiled variational kernel against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--rows 2000] [--p 400] [--q 20] [--repeat 3]

Both kernels fit the same batch of (subject, label) rows at the true
parameters of the simulator; the script reports the best of ``--repeat``
wall times and the largest difference in the attained objective.
"""
import argparse
import time

import numpy as np

from palmscore import _backend
from palmscore.core import ubar_rows
from palmscore.gva import fit_gva_batch
from palmscore.simulate import SimConfig, gen_dataset


def best_time(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--q", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    data, truth = gen_dataset(SimConfig(n=0, N=args.rows, p=args.p, q=args.q, seed=1))
    Uy = ubar_rows(data.U, truth.labels_full)
    X = data.X.astype(float)
    results = {}
    for name in sorted(_backend.KERNELS):
        t, fit = best_time(lambda: fit_gva_batch(truth.theta0, X, Uy, truth.V, threads=args.threads,
                                                 want_gram=True, backend=name), args.repeat)
        results[name] = (t, fit)
        print(f"{name:>9}: {t:8.3f} s  ({1e3 * t / args.rows:.3f} ms/row, "
              f"mean iterations {fit.iters.mean():.1f})")
    if len(results) == 2:
        (tc, fc), (tp, fp) = results["compiled"], results["python"]
        print(f"  speedup: {tp / tc:.1f}x, max |dQ| = {np.abs(fc.Q - fp.Q).max():.2e}")
    else:
        print("  compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
