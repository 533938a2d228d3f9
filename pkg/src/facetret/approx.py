"""Test-time linear approximation of a promptable embedder.

K images are sampled from a facet's candidate pools; their general (a) and
prompted (b) embeddings form the columns of A and B, and W = B A^T. Since
(W a) . q = a . (W^T q), the map is applied once to the query and scored
against the stored general embeddings.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .benchmark import BenchmarkSet, EvalRecord, rows_to_csv
from .errors import DimMismatch, EmptyPool, NormError, ValidationError
from .prompts import PromptRegistry, PromptSpec
from .providers import EmbedderProvider, IMAGE_GENERAL, IMAGE_PROMPTED, build_store, embed_case_queries
from .search import batch_ranks
from .store import EmbeddingStore, normalize

log = logging.getLogger(__name__)

PAIR_NORM_TOL = 1e-4
LSQ_RIDGE = 1e-6


@dataclass(frozen=True)
class SamplePairs:
    A: np.ndarray  # dim x K general embeddings
    B: np.ndarray  # dim x K prompted embeddings
    image_ids: tuple[str, ...]
    prompt_id: str
    seed: int | None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if A.ndim != 2 or A.shape != B.shape:
            raise DimMismatch(f"A {A.shape} and B {B.shape} must be matching dim x K matrices")
        if A.shape[1] != len(self.image_ids):
            raise ValidationError(f"{A.shape[1]} columns for {len(self.image_ids)} image ids")
        for name, m in (("A", A), ("B", B)):
            norms = np.linalg.norm(m, axis=0)
            bad = np.flatnonzero(~(np.abs(norms - 1.0) <= PAIR_NORM_TOL))
            if bad.size:
                raise NormError(f"column {int(bad[0])} of {name} has norm {norms[bad[0]]!r}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def K(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class LinearMap:
    W: np.ndarray
    K: int
    prompt_id: str
    seed: int | None

    def __post_init__(self):
        if not np.all(np.isfinite(self.W)):
            raise ValidationError("linear map has non-finite entries")

    def scaled(self, c: float) -> "LinearMap":
        return LinearMap(self.W * c, self.K, self.prompt_id, self.seed)


def sample_pairs(
    provider: EmbedderProvider,
    image_pool: Sequence[str],
    prompt: PromptSpec,
    K: int,
    seed: int | None,
    *,
    general_store: EmbeddingStore | None = None,
) -> SamplePairs:
    """Draw K pool images uniformly without replacement and embed them both ways.

    General embeddings come from ``general_store`` when given (they are already
    computed during pre-processing); only the prompted side calls the provider.
    """
    if K < 1:
        raise ValidationError(f"sample size K must be >= 1, got {K}")
    pool = sorted(set(image_pool))
    if not pool:
        raise EmptyPool("cannot sample from an empty image pool")
    if K > len(pool):
        log.warning("K=%d exceeds pool size %d; clamping", K, len(pool))
        K = len(pool)
    provider.require(IMAGE_PROMPTED)
    rng = np.random.default_rng(seed)
    ids = [pool[i] for i in rng.choice(len(pool), size=K, replace=False)]
    if general_store is not None:
        a = np.stack([general_store.get(i) for i in ids])
    else:
        provider.require(IMAGE_GENERAL)
        a = provider.embed_images_general(ids)
    b = provider.embed_images_prompted(ids, prompt)
    return SamplePairs(a.T, b.T, tuple(ids), prompt.prompt_id, seed)


def fit_linear_map(pairs: SamplePairs) -> LinearMap:
    return LinearMap(pairs.B @ pairs.A.T, pairs.K, pairs.prompt_id, pairs.seed)


def fit_linear_map_lsq(pairs: SamplePairs, ridge: float = LSQ_RIDGE) -> LinearMap:
    """Ridge least-squares fit W = B A^T (A A^T + ridge I)^-1, for ablations."""
    A, B = pairs.A, pairs.B
    gram = A @ A.T + ridge * np.eye(A.shape[0])
    W = np.linalg.solve(gram, (B @ A.T).T).T
    return LinearMap(W, pairs.K, pairs.prompt_id, pairs.seed)


def transform_query(lmap: LinearMap, q) -> np.ndarray:
    """normalize(W^T q) in float64. A degenerate fit raises ZeroVector."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != lmap.W.shape[0]:
        raise DimMismatch(f"query dim {q.shape} does not match map {lmap.W.shape}")
    return normalize(lmap.W.T @ q, dtype=np.float64)


def transform_queries(lmap: LinearMap, Q) -> np.ndarray:
    return np.stack([transform_query(lmap, q) for q in np.asarray(Q)]) if len(Q) else np.zeros((0, lmap.W.shape[0]))


Fitter = Callable[[SamplePairs], LinearMap]


@dataclass
class FacetFit:
    facet: str
    K: int
    seed: int | None
    records: list[EvalRecord]
    prompted_calls: int


def evaluate_facet_approx(
    provider: EmbedderProvider,
    bench: BenchmarkSet,
    facet: str,
    prompt: PromptSpec,
    K: int,
    seed: int | None,
    general_store: EmbeddingStore,
    query_vectors: np.ndarray,
    *,
    fitter: Fitter = fit_linear_map,
    pool_facet: str | None = None,
    mode: str = "linear_approx",
) -> FacetFit:
    """Fit one map for ``facet`` and rank all of its cases against the general store.

    ``query_vectors`` holds the raw query embeddings of ``bench.cases_for(facet)``.
    ``pool_facet`` draws the samples from another facet's pools instead.
    """
    cases = bench.cases_for(facet)
    pool = bench.image_ids(pool_facet or facet)
    pairs = sample_pairs(provider, pool, prompt, K, seed, general_store=general_store)
    lmap = fitter(pairs)
    tq = transform_queries(lmap, query_vectors)
    ranks = batch_ranks(general_store, [c.pool for c in cases], tq)
    records = [EvalRecord(c.case_id, int(r), len(c.pool), mode) for c, r in zip(cases, ranks)]
    return FacetFit(facet, pairs.K, seed, records, pairs.K)


@dataclass
class SweepResult:
    rows: list[dict]  # facet, k_sample, seed, recall_at_1, recall_at_5

    COLUMNS = ("facet", "k_sample", "seed", "recall_at_1", "recall_at_5")

    def aggregate(self) -> list[dict]:
        """Mean and standard error (sample std / sqrt(runs)) per (facet, K)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["facet"], r["k_sample"]), []).append(r)
        out = []
        for (facet, k), rs in groups.items():
            entry = {"facet": facet, "k_sample": k, "n_seeds": len(rs)}
            for metric in ("recall_at_1", "recall_at_5"):
                vals = np.array([r[metric] for r in rs], dtype=np.float64)
                entry[f"mean_{metric}"] = float(vals.mean())
                entry[f"stderr_{metric}"] = (
                    float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
                )
            out.append(entry)
        return out

    def mean(self, facet: str, k: int, metric: str = "recall_at_5") -> float:
        for e in self.aggregate():
            if e["facet"] == facet and e["k_sample"] == k:
                return e[f"mean_{metric}"]
        raise KeyError((facet, k))

    def to_csv(self) -> str:
        return rows_to_csv(self.rows, self.COLUMNS)

    def to_aggregated_csv(self) -> str:
        rows = []
        for e in self.aggregate():
            for stat in ("mean", "stderr"):
                rows.append(
                    {
                        "facet": e["facet"],
                        "k_sample": e["k_sample"],
                        "seed": stat,
                        "recall_at_1": e[f"{stat}_recall_at_1"],
                        "recall_at_5": e[f"{stat}_recall_at_5"],
                    }
                )
        return rows_to_csv(rows, self.COLUMNS)


def _recall(records, k):
    return sum(1 for r in records if r.rank <= k) / len(records)


def k_sweep(
    provider: EmbedderProvider,
    bench: BenchmarkSet,
    registry: PromptRegistry,
    Ks: Sequence[int],
    seeds: Sequence[int],
    *,
    general_store: EmbeddingStore | None = None,
    fitter: Fitter = fit_linear_map,
    pool_facets: dict | None = None,
) -> SweepResult:
    """Recall@1/@5 of the linear approximation for every (facet, K, seed) cell."""
    Ks = list(Ks)
    if not Ks:
        raise ValidationError("Ks must be non-empty")
    if any(k < 1 for k in Ks) or Ks != sorted(Ks):
        raise ValidationError(f"Ks must be positive and ascending, got {Ks}")
    if not seeds:
        raise ValidationError("need at least one seed")
    if general_store is None:
        general_store = build_store(provider, bench.image_ids())
    rows = []
    for facet in [f.name for f in bench.facets]:
        cases = bench.cases_for(facet)
        if not cases:
            continue
        prompt = registry.for_facet(facet)
        Q = embed_case_queries(provider, cases)
        for K in Ks:
            for seed in seeds:
                fit = evaluate_facet_approx(
                    provider, bench, facet, prompt, K, seed, general_store, Q,
                    fitter=fitter, pool_facet=(pool_facets or {}).get(facet),
                )
                rows.append(
                    {
                        "facet": facet,
                        "k_sample": K,
                        "seed": seed,
                        "recall_at_1": _recall(fit.records, 1),
                        "recall_at_5": _recall(fit.records, 5),
                    }
                )
    return SweepResult(rows)
