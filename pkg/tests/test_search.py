import numpy as np
import pytest

from facetret import _kernels_py, kernels
from facetret.errors import DimMismatch, UnknownId, ValidationError
from facetret.search import ScoredId, batch_ranks, rank_of, top_k
from facetret.store import EmbeddingStore

from conftest import BACKENDS, random_store


def oracle_topk(store, cand, q, k):
    q = np.asarray(q, dtype=np.float64)
    scored = [(float(np.dot(store.get(i).astype(np.float64), q)), i) for i in cand]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [i for _, i in scored[:k]]


def oracle_rank(store, cand, q, target):
    return oracle_topk(store, cand, q, len(cand)).index(target) + 1


def test_basis_example(backend):
    s = EmbeddingStore(["e1", "e2", "e3"], np.eye(3))
    assert top_k(s, ["e1", "e2", "e3"], [0, 1, 0], 1) == [ScoredId("e2", 1.0)]


def test_against_oracle(backend, rng):
    s = random_store(rng, 50, 16)
    for _ in range(20):
        q = rng.standard_normal(16)
        q /= np.linalg.norm(q)
        got = top_k(s, "all", q, 5)
        assert [r.id for r in got] == oracle_topk(s, s.ids, q, 5)
        assert all(a.score >= b.score for a, b in zip(got, got[1:]))


def test_tie_break_by_id(backend):
    v = [0.6, 0.8]
    s = EmbeddingStore(["zeta", "alpha", "mid"], [v, v, [1.0, 0.0]])
    got = top_k(s, None, v, 2)
    assert [r.id for r in got] == ["alpha", "zeta"]
    assert got[0].score == got[1].score


def test_k_larger_than_pool_and_subset(backend, rng):
    s = random_store(rng, 30, 8)
    cand = list(s.ids[:4])
    q = s.rows[10]
    got = top_k(s, cand, q, 10)
    assert sorted(r.id for r in got) == sorted(cand)
    assert top_k(s, [], q, 3) == []


def test_top_k_errors(backend):
    s = EmbeddingStore(["a"], [[1.0, 0.0]])
    with pytest.raises(ValidationError):
        top_k(s, "all", [1, 0], 0)
    with pytest.raises(DimMismatch):
        top_k(s, "all", [1, 0, 0], 1)
    with pytest.raises(UnknownId):
        top_k(s, ["b"], [1, 0], 1)


def test_rank_of(backend, rng):
    s = random_store(rng, 100, 12)
    q = s.rows[17]
    assert rank_of(s, s.ids, q, s.ids[17]).rank == 1
    for _ in range(10):
        q = rng.standard_normal(12)
        t = s.ids[int(rng.integers(100))]
        r = rank_of(s, s.ids, q, t)
        assert r.rank == oracle_rank(s, s.ids, q, t) and r.pool_size == 100
    with pytest.raises(UnknownId):
        rank_of(s, s.ids[:5], q, s.ids[50])


def test_all_equal_scores(backend):
    ids = [f"c{i:03d}" for i in range(100)]
    s = EmbeddingStore(ids, np.tile([1.0, 0.0], (100, 1)))
    assert rank_of(s, ids[::-1], [1, 0], "c000").rank == 1
    assert rank_of(s, ids, [1, 0], "c099").rank == 100


def test_batch_ranks_matches_rank_of(backend, rng):
    s = random_store(rng, 300, 10)
    pools = [list(rng.choice(s.ids, 40, replace=False)) for _ in range(25)]
    Q = rng.standard_normal((25, 10))
    ranks = batch_ranks(s, pools, Q)
    assert ranks.tolist() == [rank_of(s, p, q, p[0]).rank for p, q in zip(pools, Q)]
    targets = [p[7] for p in pools]
    assert batch_ranks(s, pools, Q, targets).tolist() == [oracle_rank(s, p, q, p[7]) for p, q in zip(pools, Q)]
    with pytest.raises(UnknownId):
        batch_ranks(s, pools[:1], Q[:1], ["not-there"])
    with pytest.raises(DimMismatch):
        batch_ranks(s, pools, Q[:3])
    assert batch_ranks(s, [], np.zeros((0, 10))).size == 0


def test_batch_ranks_with_ties(backend):
    ids = ["d", "b", "a", "c"]
    s = EmbeddingStore(ids, [[1, 0], [1, 0], [0, 1], [1, 0]])
    assert batch_ranks(s, [ids], [[1.0, 0.0]]).tolist() == [3]
    assert batch_ranks(s, [ids], [[1.0, 0.0]], ["b"]).tolist() == [1]


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree(rng):
    py, cy = BACKENDS
    rows = rng.standard_normal((500, 24)).astype(np.float32)
    order = rng.permutation(500).astype(np.int64)
    pools = np.stack([rng.choice(500, 100, replace=False) for _ in range(60)]).astype(np.int64)
    Q = rng.standard_normal((60, 24))
    slots = rng.integers(0, 100, 60).astype(np.int64)
    assert np.array_equal(py.batch_rank(rows, pools, Q, slots, order), cy.batch_rank(rows, pools, Q, slots, order))
    for c in range(10):
        a = py.topk(rows, pools[c], Q[c], 7, order)
        b = cy.topk(rows, pools[c], Q[c], 7, order)
        assert np.array_equal(a[0], b[0])
        np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)
        assert py.rank_in_pool(rows, pools[c], Q[c], 3, order) == cy.rank_in_pool(rows, pools[c], Q[c], 3, order)
    np.testing.assert_allclose(py.score(rows, pools[0], Q[0]), cy.score(rows, pools[0], Q[0]), atol=1e-12)


def test_default_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert _kernels_py.BACKEND == "python"


def test_pure_env_forces_fallback():
    import subprocess
    import sys

    code = "from facetret import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"FACETRET_PURE": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
