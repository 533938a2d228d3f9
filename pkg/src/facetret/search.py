"""Exact inner-product top-k search and rank-of-positive over candidate subsets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DimMismatch, UnknownId, ValidationError
from .store import EmbeddingStore


@dataclass(frozen=True)
class ScoredId:
    id: str
    score: float


@dataclass(frozen=True)
class RankResult:
    target: str
    rank: int
    pool_size: int


def _query(store: EmbeddingStore, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != store.dim:
        raise DimMismatch(f"query dim {q.shape} does not match store dim {store.dim}")
    return np.ascontiguousarray(q)


def _candidates(store: EmbeddingStore, candidates) -> np.ndarray:
    if candidates is None or (isinstance(candidates, str) and candidates == "all"):
        return np.arange(len(store), dtype=np.int64)
    return store.positions(candidates)


def top_k(store: EmbeddingStore, candidates, q, k: int) -> list[ScoredId]:
    """Best ``k`` candidates by dot product; ties go to the smaller id.

    ``candidates`` is an iterable of ids, or ``"all"``/None for the whole store.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    qv = _query(store, q)
    idx = _candidates(store, candidates)
    if idx.size == 0:
        return []
    slots, scores = kernels.topk(store.rows, idx, qv, k, store.id_order)
    return [ScoredId(store.ids[idx[s]], float(v)) for s, v in zip(slots, scores)]


def rank_of(store: EmbeddingStore, candidates: Sequence[str], q, target: str) -> RankResult:
    qv = _query(store, q)
    idx = store.positions(candidates)
    tpos = store.position(target)
    hits = np.flatnonzero(idx == tpos)
    if hits.size == 0:
        raise UnknownId(f"target {target!r} is not among the candidates")
    rank = kernels.rank_in_pool(store.rows, idx, qv, int(hits[0]), store.id_order)
    return RankResult(target, int(rank), int(idx.size))


def batch_ranks(
    store: EmbeddingStore,
    pools: Iterable[Sequence[str]],
    queries,
    targets: Sequence[str] | None = None,
) -> np.ndarray:
    """Rank of each target within its pool; the hot path of evaluation.

    Pools must share one length. When ``targets`` is None the first id of each
    pool is the target.
    """
    pool_idx = np.asarray([store.positions(p) for p in pools], dtype=np.int64)
    if pool_idx.size == 0:
        return np.empty(0, dtype=np.int64)
    queries = np.ascontiguousarray(np.asarray(queries, dtype=np.float64))
    if queries.ndim != 2 or queries.shape != (pool_idx.shape[0], store.dim):
        raise DimMismatch(f"queries shape {queries.shape} does not match pools/store")
    if targets is None:
        slots = np.zeros(pool_idx.shape[0], dtype=np.int64)
    else:
        slots = np.empty(pool_idx.shape[0], dtype=np.int64)
        for c, (row, t) in enumerate(zip(pool_idx, targets)):
            hit = np.flatnonzero(row == store.position(t))
            if hit.size == 0:
                raise UnknownId(f"target {t!r} is not in pool {c}")
            slots[c] = hit[0]
    return kernels.batch_rank(store.rows, pool_idx, queries, slots, store.id_order)
