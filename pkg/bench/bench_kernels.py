"""Time the numba kernels against their numpy twins.

    python bench/bench_kernels.py [--repeat 5]

Also times one end-to-end blocked retrieval pass. With
ACML_DISABLE_NUMBA=1 only the numpy column is reported.
"""

import argparse
import time

import numpy as np

from acml import _kernels as K
from acml.retrieval import CandidatePool, score_queries


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    ids = np.sort(rng.integers(0, 20_000, size=400_000))
    vals = rng.standard_normal((400_000, 64), dtype=np.float32)
    yield "segment_sum 400k x 64", "segment_sum", (vals, ids, 20_000)

    scores = rng.standard_normal((100, 65_536), dtype=np.float32)
    best_s = np.full((100, 100), -np.inf, dtype=np.float32)
    best_i = np.full((100, 100), np.iinfo(np.int64).max, dtype=np.int64)
    yield "topk_merge 100 x 65536, k=100", "topk_merge", (scores, 0, best_s, best_i)

    rows = rng.integers(0, 65_536, size=100)
    yield "rank_counts 100 x 65536", "rank_counts", (scores, 0, rows, scores[np.arange(100), rows])

    sv = np.sort(rng.integers(0, 1000, size=1_000_000).astype(np.float64))
    yield "average_ranks 1e6 (ties)", "average_ranks", (sv,)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"backend selected at import: {K.BACKEND}")
    print(f"{'kernel':34s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for label, name, inputs in cases(rng):
        t_np = best_of(lambda: getattr(K, f"{name}_numpy")(*inputs), args.repeat)
        if K.HAVE_NUMBA:
            fn = getattr(K, f"{name}_numba")
            fn(*inputs)  # compile outside the timing
            t_nb = best_of(lambda: fn(*inputs), args.repeat)
            print(f"{label:34s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{label:34s} {t_np:10.4f} {'-':>10s} {'-':>8s}")

    pool = CandidatePool(range(1_000_000), rng.standard_normal((1_000_000, 256), dtype=np.float32))
    q = rng.standard_normal((100, 256), dtype=np.float32)
    t = best_of(lambda: score_queries(q, pool, 100), 1)
    print(f"retrieval: 100 queries x 1e6 x 256, k=100, {K.BACKEND} merge: {t:.2f} s")


if __name__ == "__main__":
    main()
