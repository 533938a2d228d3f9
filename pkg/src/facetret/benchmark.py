"""Test-case data model, JSONL loader/writer and Recall@K reporting."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyInput, FormatError, InvariantViolation, StoreIOError, UnknownCase, ValidationError

DEFAULT_NEGATIVES = 99
CATEGORICAL = "categorical"
ORDINAL = "ordinal"


@dataclass(frozen=True)
class Facet:
    name: str
    kind: str = CATEGORICAL
    ordinal_margin: int = 0

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("facet name must be non-empty")
        if self.kind not in (CATEGORICAL, ORDINAL):
            raise InvariantViolation(f"facet {self.name!r}: unknown kind {self.kind!r}")
        if self.ordinal_margin < 0 or (self.kind == CATEGORICAL and self.ordinal_margin != 0):
            raise InvariantViolation(f"facet {self.name!r}: bad ordinal_margin {self.ordinal_margin}")

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "ordinal_margin": self.ordinal_margin}


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    case_id: str
    facet: str
    query_text: str
    positive: str
    negatives: tuple[str, ...]

    @property
    def pool(self) -> tuple[str, ...]:
        """Positive first, then negatives in file order."""
        return (self.positive,) + tuple(self.negatives)

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "facet": self.facet,
            "query_text": self.query_text,
            "positive": self.positive,
            "negatives": list(self.negatives),
        }


@dataclass(frozen=True)
class EvalRecord:
    case_id: str
    rank: int
    pool_size: int
    mode: str

    def __post_init__(self):
        if not 1 <= self.rank <= self.pool_size:
            raise InvariantViolation(f"rank {self.rank} outside [1, {self.pool_size}]")


@dataclass
class BenchmarkSet:
    facets: list[Facet]
    cases: list[TestCase]
    negatives_per_case: int = DEFAULT_NEGATIVES
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.negatives_per_case < 1:
            raise InvariantViolation("negatives_per_case must be >= 1")
        names = [f.name for f in self.facets]
        if len(set(names)) != len(names):
            raise InvariantViolation("duplicate facet names")
        declared = set(names)
        by_id = {}
        for c in self.cases:
            if c.case_id in by_id:
                raise InvariantViolation(f"duplicate case_id {c.case_id!r}")
            if c.facet not in declared:
                raise InvariantViolation(f"case {c.case_id!r}: undeclared facet {c.facet!r}")
            if len(c.negatives) != self.negatives_per_case:
                raise InvariantViolation(
                    f"case {c.case_id!r}: {len(c.negatives)} negatives, expected {self.negatives_per_case}"
                )
            pool = c.pool
            if len(set(pool)) != len(pool):
                raise InvariantViolation(f"case {c.case_id!r}: positive/negative ids not distinct")
            if not c.case_id or any(not i for i in pool):
                raise InvariantViolation(f"case {c.case_id!r}: empty id")
            by_id[c.case_id] = c
        self._by_id = by_id

    @property
    def pool_size(self) -> int:
        return self.negatives_per_case + 1

    def facet(self, name: str) -> Facet:
        for f in self.facets:
            if f.name == name:
                return f
        raise InvariantViolation(f"unknown facet {name!r}")

    def case(self, case_id: str) -> TestCase:
        try:
            return self._by_id[case_id]
        except KeyError:
            raise UnknownCase(f"unknown case {case_id!r}") from None

    def cases_for(self, facet: str) -> list[TestCase]:
        return [c for c in self.cases if c.facet == facet]

    def image_ids(self, facet: str | None = None) -> list[str]:
        """Sorted union of candidate ids, optionally restricted to one facet."""
        seen = set()
        for c in self.cases:
            if facet is None or c.facet == facet:
                seen.update(c.pool)
        return sorted(seen)


def dumps_benchmark(bench: BenchmarkSet) -> str:
    header = {"facets": [f.to_json() for f in bench.facets], "negatives_per_case": bench.negatives_per_case}
    lines = [json.dumps(header, ensure_ascii=False)]
    lines.extend(json.dumps(c.to_json(), ensure_ascii=False) for c in bench.cases)
    return "\n".join(lines) + "\n"


def save_benchmark(bench: BenchmarkSet, path) -> None:
    try:
        Path(path).write_text(dumps_benchmark(bench), encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc


def _str(obj, key, lineno):
    v = obj.get(key)
    if not isinstance(v, str):
        raise FormatError(f"line {lineno}: {key!r} must be a string")
    return v


def loads_benchmark(text: str) -> BenchmarkSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty benchmark file")
    try:
        header = json.loads(lines[0])
        facets = [
            Facet(f["name"], f.get("kind", CATEGORICAL), int(f.get("ordinal_margin", 0)))
            for f in header["facets"]
        ]
        npc = int(header.get("negatives_per_case", DEFAULT_NEGATIVES))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise FormatError(f"bad header line: {exc}") from exc
    cases = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"line {lineno}: expected an object")
        negs = obj.get("negatives")
        if not isinstance(negs, list) or not all(isinstance(n, str) for n in negs):
            raise FormatError(f"line {lineno}: 'negatives' must be an array of strings")
        cases.append(
            TestCase(
                _str(obj, "case_id", lineno),
                _str(obj, "facet", lineno),
                _str(obj, "query_text", lineno),
                _str(obj, "positive", lineno),
                tuple(negs),
            )
        )
    return BenchmarkSet(facets, cases, npc)


def load_benchmark(path) -> BenchmarkSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    return loads_benchmark(text)


def recall_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if not records:
        raise EmptyInput("recall_at_k needs at least one record")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    return sum(1 for r in records if r.rank <= k) / len(records)


@dataclass
class FacetReport:
    """Recall per (facet, k) plus macro (facet-mean) and case-weighted averages."""

    mode: str
    ks: list[int]
    recall: dict  # (facet, k) -> float
    n_cases: dict  # facet -> int
    macro: dict  # k -> float
    weighted: dict  # k -> float

    @property
    def facets(self) -> list[str]:
        return list(self.n_cases)

    def rows(self) -> list[dict]:
        out = []
        for f in self.facets:
            for k in self.ks:
                out.append({"facet": f, "k": k, "recall": self.recall[f, k], "n_cases": self.n_cases[f], "mode": self.mode})
        total = sum(self.n_cases.values())
        for label, avg in (("avg_macro", self.macro), ("avg_weighted", self.weighted)):
            for k in self.ks:
                out.append({"facet": label, "k": k, "recall": avg[k], "n_cases": total, "mode": self.mode})
        return out

    def to_csv(self) -> str:
        return rows_to_csv(self.rows(), REPORT_COLUMNS)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "rows": self.rows()[: len(self.facets) * len(self.ks)],
            "macro_average": {str(k): v for k, v in self.macro.items()},
            "case_weighted_average": {str(k): v for k, v in self.weighted.items()},
        }


REPORT_COLUMNS = ("facet", "k", "recall", "n_cases", "mode")


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r[c]) for c in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def per_facet_report(records: Sequence[EvalRecord], bench: BenchmarkSet, ks: Sequence[int]) -> FacetReport:
    if not records:
        raise EmptyInput("no records to report")
    grouped = defaultdict(list)
    for r in records:
        grouped[bench.case(r.case_id).facet].append(r)
    facets = [f.name for f in bench.facets if f.name in grouped]
    modes = {r.mode for r in records}
    recall = {(f, k): recall_at_k(grouped[f], k) for f in facets for k in ks}
    macro = {k: sum(recall[f, k] for f in facets) / len(facets) for k in ks}
    weighted = {k: recall_at_k(records, k) for k in ks}
    return FacetReport(
        mode=",".join(sorted(modes)),
        ks=list(ks),
        recall=recall,
        n_cases={f: len(grouped[f]) for f in facets},
        macro=macro,
        weighted=weighted,
    )
