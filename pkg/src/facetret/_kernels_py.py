"""Pure-Python (NumPy) search kernels.

Interface mirrors the compiled ``_kernels`` module exactly. Row indices are
int64 positions into ``rows``; ``order`` is the lexicographic id rank used for
tie-breaking (smaller wins).
"""
import numpy as np

BACKEND = "python"


def score(rows, idx, q):
    # an elementwise product summed per row uses one summation order for every
    # row, so bit-identical rows always tie (a BLAS matvec does not promise that)
    return (rows[idx].astype(np.float64) * np.asarray(q, dtype=np.float64)).sum(axis=1)


def _rank(s, order, slot):
    st = s[slot]
    return 1 + int(np.count_nonzero(s > st)) + int(
        np.count_nonzero((s == st) & (order < order[slot]))
    )


def rank_in_pool(rows, idx, q, slot, order):
    s = score(rows, idx, q)
    return _rank(s, order[idx], slot)


def batch_rank(rows, pools, queries, slots, order):
    pools = np.asarray(pools, dtype=np.int64)
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty(pools.shape[0], dtype=np.int64)
    for c in range(pools.shape[0]):
        idx = pools[c]
        out[c] = _rank(score(rows, idx, queries[c]), order[idx], int(slots[c]))
    return out


def topk(rows, idx, q, k, order):
    """Return (slots, scores) of the best ``k`` entries of ``idx``.

    ``slots`` index into ``idx``. Ordering is score descending, then id ascending.
    """
    s = score(rows, idx, q)
    k = min(int(k), s.shape[0])
    sel = np.lexsort((order[idx], -s))[:k]
    return sel.astype(np.int64), s[sel]
