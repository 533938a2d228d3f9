"""Synthetic benchmark generation with exclusive-negative sampling.

Negatives for a case are drawn only from images whose value on the queried
facet is exclusive of the positive's: a different value that is not listed as
confusable (categorical facets) or that differs by at least the ordinal margin.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .benchmark import CATEGORICAL, ORDINAL, BenchmarkSet, Facet, TestCase, dumps_benchmark, loads_benchmark
from .errors import ConfigInvalid, InsufficientNegatives
from .world import SyntheticWorld, SyntheticWorldConfig, default_confusable_pairs

log = logging.getLogger(__name__)

LOW, HIGH, ANY = "low", "high", "any"
DEFAULT_ORDINAL_MARGINS = {"count_of_people": 3}


@dataclass
class GeneratorConfig:
    world: SyntheticWorldConfig = field(default_factory=SyntheticWorldConfig)
    cases_per_facet: dict | int = 200
    negatives_per_case: int = 99
    exclusivity: dict | None = None  # facet -> [(value, value), ...]; None = built-in lists
    ordinal_margins: dict = field(default_factory=lambda: dict(DEFAULT_ORDINAL_MARGINS))
    positive_salience: dict | None = None  # facet -> low/high/any; None = first half high, rest low
    seed: int = 0

    def counts(self, facets) -> dict:
        if isinstance(self.cases_per_facet, int):
            return {f: self.cases_per_facet for f in facets}
        return {f: int(self.cases_per_facet.get(f, 0)) for f in facets}

    def salience_policy(self, facets) -> dict:
        if self.positive_salience is not None:
            return {f: self.positive_salience.get(f, ANY) for f in facets}
        half = len(facets) // 2
        return {f: HIGH if i < half else LOW for i, f in enumerate(facets)}

    def validate(self, facets) -> None:
        if self.negatives_per_case < 1:
            raise ConfigInvalid("negatives_per_case must be >= 1")
        counts = self.counts(facets)
        if isinstance(self.cases_per_facet, dict):
            unknown = set(self.cases_per_facet) - set(facets)
            if unknown:
                raise ConfigInvalid(f"cases_per_facet names unknown facets {sorted(unknown)}")
            if any(c < 1 for c in self.cases_per_facet.values()):
                raise ConfigInvalid("cases_per_facet counts must be >= 1")
        elif counts and min(counts.values()) < 1:
            raise ConfigInvalid("cases_per_facet must be >= 1")
        for f, pol in self.salience_policy(facets).items():
            if pol not in (LOW, HIGH, ANY):
                raise ConfigInvalid(f"positive_salience for {f!r} must be low, high or any")
        for f, m in self.ordinal_margins.items():
            if int(m) < 0:
                raise ConfigInvalid(f"ordinal margin for {f!r} must be >= 0")


def excluded_values(world: SyntheticWorld, facet: str, value: int, margin: int | None, pairs) -> set[int]:
    """Values on ``facet`` that may not serve as negatives for a positive with ``value``."""
    V = world.config.values_per_facet
    if margin is not None:
        return {u for u in range(V) if abs(u - value) < max(margin, 1)}
    out = {value}
    for a, b in pairs:
        ia, ib = world.value_index(facet, a), world.value_index(facet, b)
        if ia == value:
            out.add(ib)
        elif ib == value:
            out.add(ia)
    return out


def generate_benchmark(world: SyntheticWorld, config: GeneratorConfig | None = None) -> BenchmarkSet:
    config = config or GeneratorConfig(world=world.config)
    facets = list(world.facets)
    config.validate(facets)
    counts = config.counts(facets)
    policy = config.salience_policy(facets)
    npc = config.negatives_per_case
    rng = np.random.default_rng(config.seed)
    ids = world.image_ids
    vals, sal = world.arrays(ids)
    high = world.config.salience_high

    facet_decls, cases = [], []
    for fi, facet in enumerate(facets):
        margin = config.ordinal_margins.get(facet)
        margin = None if margin is None else int(margin)
        facet_decls.append(Facet(facet, ORDINAL, margin) if margin is not None else Facet(facet, CATEGORICAL, 0))
        n_cases = counts[facet]
        if n_cases == 0:
            continue
        pairs = (
            config.exclusivity.get(facet, [])
            if config.exclusivity is not None
            else default_confusable_pairs(facet, world.value_names[facet])
        )
        admissible = {}
        for v in range(world.config.values_per_facet):
            bad = excluded_values(world, facet, v, margin, pairs)
            admissible[v] = np.flatnonzero(~np.isin(vals[:, fi], sorted(bad)))
        feasible = {v for v, a in admissible.items() if a.size >= npc}

        is_high = sal[:, fi] == high
        mask = {HIGH: is_high, LOW: ~is_high, ANY: np.ones(len(ids), dtype=bool)}[policy[facet]]
        eligible = np.flatnonzero(mask)
        if eligible.size == 0:
            raise ConfigInvalid(f"facet {facet!r}: no image satisfies positive_salience={policy[facet]}")
        ok = eligible[np.isin(vals[eligible, fi], sorted(feasible))]
        if ok.size == 0:
            v = int(vals[eligible[0], fi])
            raise InsufficientNegatives(facet, world.value_names[facet][v], int(admissible[v].size), npc)
        skipped = sorted({int(x) for x in vals[eligible, fi]} - feasible)
        if skipped:
            log.warning(
                "facet %r: values %s lack %d admissible negatives and are never queried",
                facet, [world.value_names[facet][v] for v in skipped], npc,
            )
        positives = rng.choice(ok, size=n_cases, replace=ok.size < n_cases)
        for j, p in enumerate(positives):
            v = int(vals[p, fi])
            neg = rng.choice(admissible[v], size=npc, replace=False)
            cases.append(
                TestCase(
                    case_id=f"{facet}-{j:05d}",
                    facet=facet,
                    query_text=world.query_text(facet, v),
                    positive=ids[p],
                    negatives=tuple(ids[i] for i in neg),
                )
            )
    bench = BenchmarkSet(facet_decls, cases, npc)
    # every emitted benchmark must survive its own file format
    return loads_benchmark(dumps_benchmark(bench))
