"""Hot numeric loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same contract. Set
``ACML_DISABLE_NUMBA=1`` before import to force the numpy path (useful for
debugging and for the benchmark in ``bench/``).
"""

import os

import numpy as np

_DISABLED = os.environ.get("ACML_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ACML_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- segment sum


def segment_sum_numpy(values, segment_ids, n_segments):
    out = np.zeros((n_segments,) + values.shape[1:], dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    # ids are sorted, so every segment is a contiguous run
    starts = np.flatnonzero(np.r_[True, segment_ids[1:] != segment_ids[:-1]])
    out[segment_ids[starts]] = np.add.reduceat(values, starts, axis=0)
    return out


def _segment_sum_loop(values, segment_ids, n_segments):
    out = np.zeros((n_segments, values.shape[1]), dtype=values.dtype)
    for i in range(values.shape[0]):
        s = segment_ids[i]
        for j in range(values.shape[1]):
            out[s, j] += values[i, j]
    return out


# ------------------------------------------------------------ top-k selection


def topk_merge_numpy(scores, offset, best_scores, best_idx):
    """Merge one block of scores into the running per-query top-k.

    ``scores`` is (q, b) for pool rows ``offset .. offset+b``. Ties go to the
    lower pool row. Returns new (best_scores, best_idx), both (q, k).
    """
    q, b = scores.shape
    k = best_scores.shape[1]
    cand_s = np.concatenate([best_scores, scores], axis=1)
    cand_i = np.concatenate(
        [best_idx, np.broadcast_to(np.arange(offset, offset + b, dtype=np.int64), (q, b))], axis=1
    )
    m = cand_s.shape[1]
    kk = min(k, m)
    # k-th largest per row; everything >= it is a candidate (ties included)
    thr = -np.partition(-cand_s, kk - 1, axis=1)[:, kk - 1]
    rows, cols = np.nonzero(cand_s >= thr[:, None])
    vals = cand_s[rows, cols]
    ids = cand_i[rows, cols]
    order = np.lexsort((ids, -vals, rows))
    rows, vals, ids = rows[order], vals[order], ids[order]
    counts = np.bincount(rows, minlength=q)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    take = (starts[:, None] + np.arange(kk)[None, :]).ravel()
    new_s = np.full((q, k), -np.inf, dtype=best_scores.dtype)
    new_i = np.full((q, k), np.iinfo(np.int64).max, dtype=np.int64)
    new_s[:, :kk] = vals[take].reshape(q, kk)
    new_i[:, :kk] = ids[take].reshape(q, kk)
    return new_s, new_i


def _topk_merge_loop(scores, offset, best_scores, best_idx):
    q, b = scores.shape
    k = best_scores.shape[1]
    new_s = best_scores.copy()
    new_i = best_idx.copy()
    for r in range(q):
        for c in range(b):
            s = scores[r, c]
            # rows arrive in ascending order, so an equal score never displaces
            if not s > new_s[r, k - 1]:
                continue
            pos = k - 1
            while pos > 0 and s > new_s[r, pos - 1]:
                new_s[r, pos] = new_s[r, pos - 1]
                new_i[r, pos] = new_i[r, pos - 1]
                pos -= 1
            new_s[r, pos] = s
            new_i[r, pos] = offset + c
    return new_s, new_i


# --------------------------------------------------------------- target rank


def rank_counts_numpy(scores, offset, target_rows, target_scores):
    """Per query, count block rows that outrank the target row.

    A row outranks the target if its score is larger, or equal with a
    smaller row index. The target row never counts against itself, even if
    its block score differs from ``target_scores`` in the last bit.
    """
    idx = np.arange(offset, offset + scores.shape[1])[None, :]
    ts = target_scores[:, None]
    tr = target_rows[:, None]
    ahead = ((scores > ts) | ((scores == ts) & (idx < tr))) & (idx != tr)
    return ahead.sum(axis=1).astype(np.int64)


def _rank_counts_loop(scores, offset, target_rows, target_scores):
    q, b = scores.shape
    out = np.zeros(q, dtype=np.int64)
    for r in range(q):
        ts = target_scores[r]
        tr = target_rows[r]
        n = 0
        for c in range(b):
            s = scores[r, c]
            if offset + c == tr:
                continue
            if s > ts or (s == ts and offset + c < tr):
                n += 1
        out[r] = n
    return out


# ------------------------------------------------------------ averaged ranks


def average_ranks_numpy(sorted_values):
    """1-based ranks of an ascending array, ties sharing their mean rank."""
    n = sorted_values.shape[0]
    if n == 0:
        return np.zeros(0)
    starts = np.flatnonzero(np.r_[True, sorted_values[1:] != sorted_values[:-1]])
    ends = np.r_[starts[1:], n]
    mean_rank = (starts + ends + 1) / 2.0
    return np.repeat(mean_rank, ends - starts)


def _average_ranks_loop(sorted_values):
    n = sorted_values.shape[0]
    out = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        r = (i + j + 2) / 2.0
        for t in range(i, j + 1):
            out[t] = r
        i = j + 1
    return out


if HAVE_NUMBA:
    _segment_sum_jit = njit(cache=True)(_segment_sum_loop)
    topk_merge_numba = njit(cache=True)(_topk_merge_loop)
    rank_counts_numba = njit(cache=True)(_rank_counts_loop)
    average_ranks_numba = njit(cache=True)(_average_ranks_loop)

    def segment_sum_numba(values, segment_ids, n_segments):
        if values.ndim == 1:
            return _segment_sum_jit(values[:, None], segment_ids, n_segments)[:, 0]
        width = int(np.prod(values.shape[1:]))
        flat = np.ascontiguousarray(values.reshape(values.shape[0], width))
        out = _segment_sum_jit(flat, segment_ids, n_segments)
        return out.reshape((n_segments,) + values.shape[1:])

    segment_sum = segment_sum_numba
    topk_merge = topk_merge_numba
    rank_counts = rank_counts_numba
    average_ranks = average_ranks_numba
else:
    segment_sum = segment_sum_numpy
    topk_merge = topk_merge_numpy
    rank_counts = rank_counts_numpy
    average_ranks = average_ranks_numpy
