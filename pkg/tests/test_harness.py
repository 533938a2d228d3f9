import csv
import io
import json

import numpy as np
import pytest

from facetret.errors import MissingPrompt, ValidationError
from facetret.harness import (
    NAIVE_PROMPTED,
    CostLedger,
    EvalMode,
    RunManifest,
    cost_csv,
    cost_report,
    run_baseline,
    run_linear_approx,
    run_preprocessed_selected,
    run_prompted_gt,
    run_random,
    write_reports,
)
from facetret.prompts import PromptRegistry, PromptSpec, default_registry
from facetret.providers import SyntheticProvider, build_store, embed_case_queries
from facetret.search import batch_ranks
from facetret.world import SyntheticWorld

REG = default_registry()


class ScriptedSelector:
    def __init__(self, letter):
        self.letter = letter

    def complete(self, messages, max_tokens=64):
        return self.letter


def rows_by_phase(ledger):
    return {r.phase: r for r in cost_report(ledger)}


def test_baseline_ledger(small_world, small_bench):
    recs, led = run_baseline(small_bench, SyntheticProvider(small_world))
    N, M = len(small_bench.image_ids()), len(small_bench.cases)
    rows = rows_by_phase(led)
    assert rows["total"].unit_total == rows["total"].counter_total == N + M
    assert rows["per_query"].counter_total == 1.0
    assert len(recs) == M and [r.case_id for r in recs] == [c.case_id for c in small_bench.cases]


def test_custom_unit_costs(small_world, small_bench):
    _, led = run_baseline(small_bench, SyntheticProvider(small_world), costs={"v": 2.0, "t": 0.5})
    N, M = len(small_bench.image_ids()), len(small_bench.cases)
    assert rows_by_phase(led)["total"].counter_total == 2.0 * N + 0.5 * M


def test_prompted_ledger(small_world, small_bench):
    recs, led = run_prompted_gt(small_bench, SyntheticProvider(small_world), REG)
    sum_nf = sum(len(small_bench.image_ids(f.name)) for f in small_bench.facets)
    rows = rows_by_phase(led)
    assert rows["preprocess"].counter_total == rows["preprocess"].unit_total == sum_nf
    assert rows["per_query"].counter_total == 1.0
    assert rows["naive_per_query"].unit_total == len(small_bench.image_ids()) + 1


def test_preprocessed_ledger(small_world, small_bench):
    facets = [f.name for f in small_bench.facets]
    reg = REG.subset(facets)
    recs, led, acc = run_preprocessed_selected(small_bench, SyntheticProvider(small_world), reg)
    rows = rows_by_phase(led)
    assert rows["per_query"].counter_total == rows["per_query"].unit_total == 1.0
    assert rows["preprocess"].counter_total == len(reg) * len(small_bench.image_ids())
    assert rows["selector_calls"].counter_total == len(small_bench.cases)
    assert acc == {f: 1.0 for f in facets}


def test_linear_ledger(small_world, small_bench):
    recs, led = run_linear_approx(small_bench, SyntheticProvider(small_world), REG, 20, seed=1)
    rows = rows_by_phase(led)
    assert rows["per_query"].unit_total == rows["per_query"].counter_total == 21.0
    M = len(small_bench.cases)
    assert rows["per_query_amortized"].counter_total == (20 * len(small_bench.facets) + M) / M
    assert led.calls("prompted_embed_calls", "query") == 20 * len(small_bench.facets)
    assert led.calls("prompted_embed_calls", "preprocess") == 0


def test_naive_formula_rows():
    led = CostLedger(NAIVE_PROMPTED, N=1000, M=10)
    rows = cost_report(led)
    assert [(r.phase, r.unit_total) for r in rows] == [("total", 1000 + 10 * 1001), ("per_query", 1001)]
    text = cost_csv(rows)
    assert next(csv.DictReader(io.StringIO(text)))["counter_total"] == ""


def test_ledger_guards():
    led = CostLedger("baseline")
    with pytest.raises(ValueError):
        led.count("query", "nope")
    with pytest.raises(ValueError):
        led.count("query", "text_embed_calls", -1)
    with pytest.raises(ValidationError):
        cost_report(CostLedger("mystery"))


@pytest.mark.parametrize("mode", ["baseline", "prompted", "approx"])
def test_parallel_matches_serial(small_world, small_bench, mode):
    p = SyntheticProvider(small_world)
    run = {
        "baseline": lambda w: run_baseline(small_bench, p, workers=w),
        "prompted": lambda w: run_prompted_gt(small_bench, p, REG, workers=w),
        "approx": lambda w: run_linear_approx(small_bench, p, REG, 15, seed=3, workers=w),
    }[mode]
    serial, _ = run(1)
    parallel, _ = run(4)
    assert serial == parallel


def test_unit_boost_prompted_equals_baseline(small_world, small_bench):
    w = SyntheticWorld(small_world.config.replace(prompt_boost=1.0), small_world.images)
    p = SyntheticProvider(w)
    base, _ = run_baseline(small_bench, p)
    prom, _ = run_prompted_gt(small_bench, p, REG)
    assert [r.rank for r in base] == [r.rank for r in prom]


def test_missing_prompt(small_world, small_bench):
    with pytest.raises(MissingPrompt):
        run_prompted_gt(small_bench, SyntheticProvider(small_world), REG.subset(["animals"]))


def test_wrong_selection_still_evaluates(small_world, small_bench):
    p = SyntheticProvider(small_world)
    reg = REG.subset([f.name for f in small_bench.facets])
    recs, _, acc = run_preprocessed_selected(small_bench, p, reg, ScriptedSelector("A"), max_in_flight=3)
    assert len(recs) == len(small_bench.cases)
    first = reg.prompts[0].facet
    assert acc[first] == 1.0 and all(v == 0.0 for f, v in acc.items() if f != first)
    store = build_store(p, small_bench.image_ids(), reg.prompts[0])
    expect = batch_ranks(store, [c.pool for c in small_bench.cases], embed_case_queries(p, small_bench.cases))
    assert [r.rank for r in recs] == expect.tolist()


def test_random_scorer_is_seeded(small_bench):
    a = run_random(small_bench, 0)
    assert a == run_random(small_bench, 0)
    assert all(r.mode == "random" for r in a)


def test_write_reports_and_manifest(tmp_path, small_world, small_bench):
    recs, led = run_baseline(small_bench, SyntheticProvider(small_world))
    paths = write_reports(tmp_path / "out", recs, small_bench, led, extra={"note": 1})
    assert set(paths) == {"report_csv", "report_json", "cost_csv"}
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["note"] == 1 and doc["mode"] == "baseline"
    RunManifest("baseline", "b.jsonl", "synthetic", seed=1, outputs=paths).write(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["outputs"] == paths
