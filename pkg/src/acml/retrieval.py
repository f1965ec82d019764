"""Ranking graph candidates against modality queries.

Scores are plain dot products unless a pool is built with
``similarity="cosine"``. Pools are scored in fixed-size row blocks so a
memory-mapped matrix never has to be resident, and ties always go to the
lower pool row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import DimMismatch, TargetNotInPool
from .store import EmbeddingStore

DEFAULT_BLOCK = 65536


@dataclass
class CandidatePool:
    ids: list
    matrix: np.ndarray
    similarity: str = "dot"
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = list(self.ids)
        if len(self.ids) == 0:
            raise ValueError("candidate pool is empty")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise DimMismatch(f"{len(self.ids)} ids for matrix of shape {self.matrix.shape}")
        if self.similarity not in ("dot", "cosine"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        self.index = {m: i for i, m in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("pool ids must be unique")

    @classmethod
    def from_store(cls, store: EmbeddingStore, similarity="dot") -> "CandidatePool":
        return cls(store.ids, store.matrix, similarity)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def block(self, start: int, stop: int) -> np.ndarray:
        b = np.ascontiguousarray(self.matrix[start:stop], dtype=np.float32)
        if self.similarity == "cosine":
            b = _unit_rows(b)
        return b

    def rows_of(self, ids) -> np.ndarray:
        out = np.empty(len(ids), dtype=np.int64)
        for i, m in enumerate(ids):
            try:
                out[i] = self.index[m]
            except KeyError:
                raise TargetNotInPool(m) from None
        return out


@dataclass
class RetrievalResult:
    query_id: str
    ids: list
    scores: np.ndarray
    rank_of_target: int | None = None


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0, 1, n)


def _queries(q, pool: CandidatePool) -> np.ndarray:
    q = np.asarray(q, dtype=np.float32)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[1] != pool.dim:
        raise DimMismatch(f"query dim {q.shape[1]} but pool dim {pool.dim}")
    if pool.similarity == "cosine":
        q = _unit_rows(q)
    return np.ascontiguousarray(q)


def score_queries(queries, pool: CandidatePool, k: int, block_size: int = DEFAULT_BLOCK):
    """Top-k (scores, pool rows) for every query row, each (q, k)."""
    q = _queries(queries, pool)
    if not 1 <= k <= len(pool):
        raise ValueError(f"k={k} outside 1..{len(pool)}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    best_s = np.full((q.shape[0], k), -np.inf, dtype=np.float32)
    best_i = np.full((q.shape[0], k), np.iinfo(np.int64).max, dtype=np.int64)
    for start in range(0, len(pool), block_size):
        stop = min(start + block_size, len(pool))
        scores = q @ pool.block(start, stop).T
        best_s, best_i = _kernels.topk_merge(scores, start, best_s, best_i)
    return best_s, best_i


def score_pool(query, pool: CandidatePool, k: int, block_size: int = DEFAULT_BLOCK, query_id: str = "") -> RetrievalResult:
    s, i = score_queries(query, pool, k, block_size)
    return RetrievalResult(query_id, [pool.ids[j] for j in i[0]], s[0])


def target_ranks(queries, target_ids, pool: CandidatePool, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """1-based rank of each query's target under the same ordering as score_pool."""
    q = _queries(queries, pool)
    rows = pool.rows_of(target_ids)
    if rows.shape[0] != q.shape[0]:
        raise DimMismatch(f"{q.shape[0]} queries but {rows.shape[0]} targets")
    tgt = np.ascontiguousarray(pool.matrix[rows], dtype=np.float32)
    if pool.similarity == "cosine":
        tgt = _unit_rows(tgt)
    ts = np.einsum("ij,ij->i", q, tgt).astype(np.float32)
    ahead = np.zeros(q.shape[0], dtype=np.int64)
    for start in range(0, len(pool), block_size):
        stop = min(start + block_size, len(pool))
        scores = q @ pool.block(start, stop).T
        ahead += _kernels.rank_counts(scores, start, rows, ts)
    return ahead + 1


def topk_accuracy(queries, target_ids, pool: CandidatePool, ks, block_size: int = DEFAULT_BLOCK):
    """Fraction of queries whose target ranks within k, for each k in ``ks``.

    Returns (dict k -> accuracy, per-query ranks).
    """
    ranks = target_ranks(queries, target_ids, pool, block_size)
    acc = {int(k): float(np.mean(ranks <= k)) if ranks.size else 0.0 for k in ks}
    return acc, ranks


def isomer_discriminate(h_c, cand_a, cand_b, tau: float = 1.0):
    """Pick the candidate whose graph embedding scores higher against h_c.

    Confidence is the two-way softmax probability of the chosen side, so it
    lies in [0.5, 1]; a tie picks A with confidence 0.5.
    """
    h_c, cand_a, cand_b = (np.asarray(x, dtype=np.float64).ravel() for x in (h_c, cand_a, cand_b))
    if not h_c.shape == cand_a.shape == cand_b.shape:
        raise DimMismatch(f"shapes differ: {h_c.shape}, {cand_a.shape}, {cand_b.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    sa, sb = float(h_c @ cand_a), float(h_c @ cand_b)
    choice = "A" if sa >= sb else "B"
    return choice, float(expit(abs(sa - sb) / tau))


# ------------------------------------------------------------------- output


def write_retrieval_csv(path, query_ids, ranks, ks) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "k", "hit", "rank_of_target"])
        for qid, r in zip(query_ids, ranks):
            for k in ks:
                w.writerow([qid, k, int(r <= k), int(r)])


def write_isomer_csv(path, rows) -> None:
    """``rows`` are (spectrum_id, candidate_a, candidate_b, choice, confidence)."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spectrum_id", "candidate_a", "candidate_b", "choice", "confidence"])
        for sid, a, b, choice, conf in rows:
            w.writerow([sid, a, b, choice, f"{conf:.6f}"])
