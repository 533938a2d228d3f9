"""Time the compiled and NumPy search kernels on the evaluation hot path.

    python benchmarks/bench_kernels.py [--cases 4000] [--pool 100] [--dim 256]
"""
import argparse
import importlib
import time

import numpy as np

from facetret import _kernels_py


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--cases", type=int, default=4000)
    ap.add_argument("--pool", type=int, default=100)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    rows = rng.standard_normal((args.rows, args.dim)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    order = rng.permutation(args.rows).astype(np.int64)
    pools = np.stack([rng.choice(args.rows, args.pool, replace=False) for _ in range(args.cases)]).astype(np.int64)
    queries = rng.standard_normal((args.cases, args.dim))
    slots = np.zeros(args.cases, dtype=np.int64)
    everything = np.arange(args.rows, dtype=np.int64)

    impls = [_kernels_py]
    try:
        impls.append(importlib.import_module("facetret._kernels"))
    except ImportError:
        print("compiled kernels not built; timing the NumPy fallback only")

    print(f"rows={args.rows} dim={args.dim} cases={args.cases} pool={args.pool} k={args.k}")
    print(f"{'backend':<8} {'batch_rank s':>13} {'cases/s':>10} {'topk(all) ms':>13}")
    results = {}
    for impl in impls:
        t_rank, ranks = _best_of(lambda: impl.batch_rank(rows, pools, queries, slots, order), args.repeat)
        t_top, top = _best_of(lambda: impl.topk(rows, everything, queries[0], args.k, order), args.repeat)
        results[impl.BACKEND] = (t_rank, ranks, top)
        print(f"{impl.BACKEND:<8} {t_rank:>13.4f} {args.cases / t_rank:>10.0f} {1e3 * t_top:>13.2f}")
    if len(results) == 2:
        (tp, rp, kp), (tc, rc, kc) = results["python"], results["cython"]
        agree = np.array_equal(rp, rc) and np.array_equal(kp[0], kc[0])
        print(f"speed-up on batch_rank: {tp / tc:.2f}x; outputs identical: {agree}")


if __name__ == "__main__":
    main()
