"""Evaluation pipelines and embedding-cost accounting.

Cost symbols: N images, M queries, K samples per fitted map, v one general
image embedding, t one text embedding (CLIP-like), F one forward pass of the
promptable embedder.
"""
from __future__ import annotations

import enum
import json
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .approx import Fitter, evaluate_facet_approx, fit_linear_map
from .benchmark import BenchmarkSet, EvalRecord, per_facet_report, rows_to_csv
from .errors import MissingPrompt, StoreIOError, ValidationError
from .prompts import PromptRegistry, TextGenClient, select_many
from .providers import (
    IMAGE_GENERAL,
    IMAGE_PROMPTED,
    TEXT_QUERY,
    EmbedderProvider,
    build_store,
    embed_case_queries,
)
from .search import batch_ranks
from .store import EmbeddingStore


class EvalMode(str, enum.Enum):
    BASELINE = "baseline"
    PROMPTED_GT = "prompted_gt"
    PREPROCESSED_SELECTED = "preprocessed_selected"
    LINEAR_APPROX = "linear_approx"


NAIVE_PROMPTED = "naive_prompted"
PREPROCESS = "preprocess"
QUERY = "query"
COUNTERS = ("image_embed_calls", "prompted_embed_calls", "text_embed_calls", "selector_calls")


@dataclass
class CostLedger:
    """Call counters per phase; every total is derived from them on demand."""

    mode: str
    N: int = 0
    M: int = 0
    K: int = 0
    v: float = 1.0
    t: float = 1.0
    F: float = 1.0
    facet_N: dict = field(default_factory=dict)
    facet_M: dict = field(default_factory=dict)
    facet_K: dict = field(default_factory=dict)
    n_prompts: int = 0
    _counts: dict = field(default_factory=lambda: defaultdict(int), repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def count(self, phase: str, counter: str, n: int = 1) -> None:
        if counter not in COUNTERS:
            raise ValueError(f"unknown counter {counter!r}")
        if n < 0:
            raise ValueError("counters only increase")
        with self._lock:
            self._counts[phase, counter] += n

    def calls(self, counter: str, phase: str | None = None) -> int:
        if phase is None:
            return sum(v for (p, c), v in self._counts.items() if c == counter)
        return self._counts.get((phase, counter), 0)

    def counters(self) -> dict:
        return {f"{p}.{c}": v for (p, c), v in sorted(self._counts.items())}


@dataclass(frozen=True)
class CostRow:
    mode: str
    phase: str
    formula: str
    unit_total: float
    counter_total: float | None


COST_COLUMNS = ("mode", "phase", "formula", "unit_total", "counter_total")


def _cost(ledger: CostLedger, phase: str, text_unit: float) -> float:
    return (
        ledger.calls("image_embed_calls", phase) * ledger.v
        + ledger.calls("prompted_embed_calls", phase) * ledger.F
        + ledger.calls("text_embed_calls", phase) * text_unit
    )


def cost_report(ledger: CostLedger, mode: str | None = None) -> list[CostRow]:
    """Symbolic formula, unit-cost value and counter-derived value per phase."""
    mode = str(getattr(mode, "value", mode) or ledger.mode)
    N, M, K, v, t, F = ledger.N, ledger.M, ledger.K, ledger.v, ledger.t, ledger.F
    rows: list[CostRow] = []
    if mode == NAIVE_PROMPTED:
        return [
            CostRow(mode, "total", "N*v + M*(N*F + F)", N * v + M * (N * F + F), None),
            CostRow(mode, "per_query", "N*F + F", N * F + F, None),
        ]
    per_q = (lambda x: x / M) if M else (lambda x: float("nan"))
    if mode == EvalMode.BASELINE.value:
        pre, qry = _cost(ledger, PREPROCESS, t), _cost(ledger, QUERY, t)
        rows += [
            CostRow(mode, PREPROCESS, "N*v", N * v, pre),
            CostRow(mode, QUERY, "M*t", M * t, qry),
            CostRow(mode, "total", "N*v + M*t", N * v + M * t, pre + qry),
            CostRow(mode, "per_query", "t", t, per_q(qry)),
        ]
    elif mode == EvalMode.PROMPTED_GT.value:
        sum_nf = sum(ledger.facet_N.values())
        pre, qry = _cost(ledger, PREPROCESS, F), _cost(ledger, QUERY, F)
        rows += [
            CostRow(mode, PREPROCESS, "sum_f(N_f)*F", sum_nf * F, pre),
            CostRow(mode, QUERY, "M*F", M * F, qry),
            CostRow(mode, "total", "sum_f(N_f)*F + M*F", sum_nf * F + M * F, pre + qry),
            CostRow(mode, "per_query", "F", F, per_q(qry)),
            CostRow(mode, "naive_per_query", "N*F + F", N * F + F, None),
        ]
    elif mode == EvalMode.PREPROCESSED_SELECTED.value:
        P = ledger.n_prompts
        pre, qry = _cost(ledger, PREPROCESS, F), _cost(ledger, QUERY, F)
        rows += [
            CostRow(mode, PREPROCESS, "P*N*F", P * N * F, pre),
            CostRow(mode, QUERY, "M*F", M * F, qry),
            CostRow(mode, "total", "P*N*F + M*F", P * N * F + M * F, pre + qry),
            CostRow(mode, "per_query", "F", F, per_q(qry)),
            CostRow(mode, "selector_calls", "M", float(M), float(ledger.calls("selector_calls"))),
        ]
    elif mode == EvalMode.LINEAR_APPROX.value:
        sum_k = sum(ledger.facet_K.values())
        pre, qry = _cost(ledger, PREPROCESS, F), _cost(ledger, QUERY, F)
        # each query carries the K prompted calls of its own facet's fit
        attributed = sum(ledger.facet_K[f] * m for f, m in ledger.facet_M.items()) * F
        attributed += ledger.calls("text_embed_calls", QUERY) * F
        rows += [
            CostRow(mode, PREPROCESS, "N*v", N * v, pre),
            CostRow(mode, QUERY, "sum_f(K_f)*F + M*F", sum_k * F + M * F, qry),
            CostRow(mode, "total", "N*v + sum_f(K_f)*F + M*F", N * v + sum_k * F + M * F, pre + qry),
            CostRow(mode, "per_query", "K*F + F", K * F + F, per_q(attributed)),
            CostRow(mode, "per_query_amortized", "(sum_f(K_f) + M)*F / M", per_q((sum_k + M) * F), per_q(qry)),
        ]
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return rows


def cost_csv(rows: Sequence[CostRow]) -> str:
    return rows_to_csv(
        [{**asdict(r), "counter_total": "" if r.counter_total is None else r.counter_total} for r in rows],
        COST_COLUMNS,
    )


def _rank(store: EmbeddingStore, cases, Q, mode: str, workers: int) -> list[EvalRecord]:
    pools = [c.pool for c in cases]
    if workers <= 1 or len(cases) < 2 * workers:
        ranks = batch_ranks(store, pools, Q)
    else:
        bounds = np.linspace(0, len(cases), workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(lambda ab: batch_ranks(store, pools[ab[0] : ab[1]], Q[ab[0] : ab[1]]), zip(bounds[:-1], bounds[1:]))
            ranks = np.concatenate(list(parts))
    return [EvalRecord(c.case_id, int(r), len(c.pool), mode) for c, r in zip(cases, ranks)]


def _new_ledger(mode: EvalMode, bench: BenchmarkSet, costs: dict | None) -> CostLedger:
    ledger = CostLedger(mode.value, N=len(bench.image_ids()), M=len(bench.cases), **(costs or {}))
    for f in bench.facets:
        m = len(bench.cases_for(f.name))
        if m:
            ledger.facet_M[f.name] = m
    return ledger


def _ordered(records: list[EvalRecord], bench: BenchmarkSet) -> list[EvalRecord]:
    pos = {c.case_id: i for i, c in enumerate(bench.cases)}
    return sorted(records, key=lambda r: pos[r.case_id])


def run_baseline(bench: BenchmarkSet, provider: EmbedderProvider, *, costs=None, workers: int = 1):
    provider.require(IMAGE_GENERAL)
    provider.require(TEXT_QUERY)
    ledger = _new_ledger(EvalMode.BASELINE, bench, costs)
    ids = bench.image_ids()
    store = build_store(provider, ids)
    ledger.count(PREPROCESS, "image_embed_calls", len(ids))
    Q = embed_case_queries(provider, bench.cases)
    ledger.count(QUERY, "text_embed_calls", len(bench.cases))
    return _rank(store, bench.cases, Q, EvalMode.BASELINE.value, workers), ledger


def _facets_with_cases(bench: BenchmarkSet) -> list[str]:
    return [f.name for f in bench.facets if bench.cases_for(f.name)]


def run_prompted_gt(bench: BenchmarkSet, provider: EmbedderProvider, registry: PromptRegistry, *, costs=None, workers: int = 1):
    """Each facet's prompted store is built once from its ground-truth prompt."""
    provider.require(IMAGE_PROMPTED)
    provider.require(TEXT_QUERY)
    facets = _facets_with_cases(bench)
    prompts = {}
    for f in facets:
        try:
            prompts[f] = registry.for_facet(f)
        except MissingPrompt:
            raise MissingPrompt(f"registry has no prompt for facet {f!r}") from None
    ledger = _new_ledger(EvalMode.PROMPTED_GT, bench, costs)
    records = []
    for f in facets:
        ids = bench.image_ids(f)
        store = build_store(provider, ids, prompts[f])
        ledger.count(PREPROCESS, "prompted_embed_calls", len(ids))
        ledger.facet_N[f] = len(ids)
        cases = bench.cases_for(f)
        Q = embed_case_queries(provider, cases)
        ledger.count(QUERY, "text_embed_calls", len(cases))
        records += _rank(store, cases, Q, EvalMode.PROMPTED_GT.value, workers)
    return _ordered(records, bench), ledger


def run_preprocessed_selected(
    bench: BenchmarkSet,
    provider: EmbedderProvider,
    registry: PromptRegistry,
    selector: TextGenClient | None = None,
    *,
    fallback_lexical: bool = False,
    max_in_flight: int = 4,
    costs=None,
    workers: int = 1,
):
    """Pre-build one store per registry prompt, then pick a prompt per query.

    Returns (records, ledger, selection accuracy per facet). A wrongly selected
    prompt is still used for retrieval.
    """
    provider.require(IMAGE_PROMPTED)
    provider.require(TEXT_QUERY)
    if len(registry) == 0:
        raise ValidationError("empty prompt registry")
    ledger = _new_ledger(EvalMode.PREPROCESSED_SELECTED, bench, costs)
    ledger.n_prompts = len(registry)
    ids = bench.image_ids()
    stores = {}
    for p in registry:
        stores[p.prompt_id] = build_store(provider, ids, p)
        ledger.count(PREPROCESS, "prompted_embed_calls", len(ids))
    outcomes = select_many(
        {c.case_id: c.query_text for c in bench.cases},
        registry,
        selector,
        fallback_lexical=fallback_lexical,
        max_in_flight=max_in_flight,
    )
    ledger.count(QUERY, "selector_calls", len(bench.cases))
    Q = embed_case_queries(provider, bench.cases)
    ledger.count(QUERY, "text_embed_calls", len(bench.cases))

    by_prompt = defaultdict(list)
    for i, c in enumerate(bench.cases):
        by_prompt[outcomes[c.case_id].chosen].append(i)
    records = []
    for pid, idxs in by_prompt.items():
        cases = [bench.cases[i] for i in idxs]
        records += _rank(stores[pid], cases, Q[idxs], EvalMode.PREPROCESSED_SELECTED.value, workers)

    accuracy = {}
    for f in _facets_with_cases(bench):
        gt = registry.for_facet(f).prompt_id if any(p.facet == f for p in registry) else None
        cases = bench.cases_for(f)
        accuracy[f] = sum(outcomes[c.case_id].chosen == gt for c in cases) / len(cases)
    return _ordered(records, bench), ledger, accuracy


def run_linear_approx(
    bench: BenchmarkSet,
    provider: EmbedderProvider,
    registry: PromptRegistry,
    K: int,
    seed: int | None,
    *,
    general_store: EmbeddingStore | None = None,
    fitter: Fitter = fit_linear_map,
    costs=None,
    workers: int = 1,
):
    """One map per facet from K sampled pairs; queries scored on the general store."""
    if K < 1:
        raise ValidationError(f"sample size K must be >= 1, got {K}")
    provider.require(IMAGE_PROMPTED)
    provider.require(TEXT_QUERY)
    facets = _facets_with_cases(bench)
    prompts = {f: registry.for_facet(f) for f in facets}
    ledger = _new_ledger(EvalMode.LINEAR_APPROX, bench, costs)
    ledger.K = K
    if general_store is None:
        provider.require(IMAGE_GENERAL)
        general_store = build_store(provider, bench.image_ids())
    ledger.count(PREPROCESS, "image_embed_calls", len(general_store))
    records = []
    for f in facets:
        cases = bench.cases_for(f)
        Q = embed_case_queries(provider, cases)
        ledger.count(QUERY, "text_embed_calls", len(cases))
        fit = evaluate_facet_approx(provider, bench, f, prompts[f], K, seed, general_store, Q, fitter=fitter)
        ledger.count(QUERY, "prompted_embed_calls", fit.prompted_calls)
        ledger.facet_K[f] = fit.K
        records += fit.records
    return _ordered(records, bench), ledger


def run_random(bench: BenchmarkSet, seed: int) -> list[EvalRecord]:
    """Uniformly random scorer; its expected Recall@1 is 1 / pool size."""
    rng = np.random.default_rng(seed)
    out = []
    for c in bench.cases:
        s = rng.random(len(c.pool))
        out.append(EvalRecord(c.case_id, 1 + int(np.count_nonzero(s > s[0])), len(c.pool), "random"))
    return out


@dataclass
class RunManifest:
    mode: str
    benchmark: str
    provider: str
    registry: str | None = None
    seed: int | None = None
    seeds: list | None = None
    Ks: list | None = None
    workers: int = 1
    costs: dict | None = None
    outputs: dict = field(default_factory=dict)
    backend: str = ""
    timestamp: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))

    def write(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreIOError(f"cannot write {path}: {exc}") from exc


def write_reports(out_dir, records, bench: BenchmarkSet, ledger: CostLedger | None, ks=(1, 5), extra: dict | None = None) -> dict:
    """Write report.csv, report.json and cost.csv; returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report = per_facet_report(records, bench, ks)
        paths = {"report_csv": str(out / "report.csv"), "report_json": str(out / "report.json")}
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        doc = report.to_json()
        if extra:
            doc.update(extra)
        (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        if ledger is not None:
            (out / "cost.csv").write_text(cost_csv(cost_report(ledger)), encoding="utf-8")
            paths["cost_csv"] = str(out / "cost.csv")
    except OSError as exc:
        raise StoreIOError(f"cannot write reports to {out}: {exc}") from exc
    return paths
