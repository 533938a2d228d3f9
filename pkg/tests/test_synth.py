import logging

import numpy as np
import pytest

from facetret.benchmark import dumps_benchmark
from facetret.errors import ConfigInvalid, FormatError, InsufficientNegatives, UnknownFacet, UnknownImage
from facetret.prompts import default_registry, select_lexical
from facetret.synth import GeneratorConfig, excluded_values, generate_benchmark
from facetret.world import (
    CANONICAL_FACETS,
    VOCAB,
    SyntheticWorld,
    SyntheticWorldConfig,
    default_confusable_pairs,
    generate_world,
    render_query,
)


def test_world_is_deterministic():
    a = generate_world(SyntheticWorldConfig(n_images=300, seed=9))
    b = generate_world(SyntheticWorldConfig(n_images=300), seed=9)
    assert a.images == b.images
    assert a.images != generate_world(SyntheticWorldConfig(n_images=300, seed=10)).images


def test_high_salience_fraction():
    for frac, F in ((0.25, 4), (0.5, 6), (0.3, 5)):
        w = generate_world(SyntheticWorldConfig(n_facets=F, n_images=4000, dominant_fraction=frac, seed=1))
        _, sal = w.arrays(w.image_ids)
        n_high = (sal == 1.0).sum(axis=1)
        assert n_high.min() >= 1
        assert abs(n_high.mean() - max(1.0, frac * F)) < 0.05


def test_config_validation_and_json():
    for bad in (dict(n_facets=1), dict(values_per_facet=2), dict(salience_low=2.0), dict(prompt_boost=0.5),
                dict(noise_scale=-1), dict(dominant_fraction=0), dict(facet_names=("a", "a", "b", "c"))):
        with pytest.raises(ConfigInvalid):
            SyntheticWorldConfig(**bad)
    assert SyntheticWorldConfig(n_facets=9).facets[-1] == "facet8"
    cfg = SyntheticWorldConfig(n_facets=3, seed=4, facet_names=("x", "y", "z"))
    assert SyntheticWorldConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigInvalid):
        SyntheticWorldConfig.from_json({"n_facets": 4, "bogus": 1})


def test_world_json_round_trip(tmp_path):
    w = generate_world(SyntheticWorldConfig(n_images=50, seed=2))
    w.save(tmp_path / "w.json")
    back = SyntheticWorld.load(tmp_path / "w.json")
    assert back.images == w.images and back.config == w.config
    (tmp_path / "bad.json").write_text('{"config": {}}')
    with pytest.raises(FormatError):
        SyntheticWorld.load(tmp_path / "bad.json")
    with pytest.raises(UnknownImage):
        w.image("nope")
    with pytest.raises(UnknownFacet):
        w.facet_index("smells")


def test_query_text_round_trip_and_lexical_selection():
    reg = default_registry()
    for facet in CANONICAL_FACETS:
        for name in VOCAB[facet]:
            text = render_query(facet, name)
            assert select_lexical(text, reg).chosen == f"gpt_{facet}", text
    w = generate_world(SyntheticWorldConfig(n_facets=8, values_per_facet=6, n_images=10))
    for f in w.facets:
        for v in range(6):
            assert w.parse_query(w.query_text(f, v)) == (f, v)


def test_generic_template_for_custom_facets():
    w = generate_world(SyntheticWorldConfig(n_facets=2, n_images=5, facet_names=("hue", "shape")))
    assert w.query_text("hue", 0) == "Find me an everyday image where the hue is hue_0."


def test_benchmark_determinism(small_world):
    cfg = GeneratorConfig(world=small_world.config, cases_per_facet=10, seed=7)
    assert dumps_benchmark(generate_benchmark(small_world, cfg)) == dumps_benchmark(generate_benchmark(small_world, cfg))
    other = GeneratorConfig(world=small_world.config, cases_per_facet=10, seed=8)
    assert dumps_benchmark(generate_benchmark(small_world, other)) != dumps_benchmark(generate_benchmark(small_world, cfg))


def test_negatives_are_exclusive(small_world, small_bench):
    for case in small_bench.cases:
        fi = small_world.facet_index(case.facet)
        v, _ = small_world.parse_query(case.query_text)[1], None
        assert small_world.image(case.positive).values[fi] == v
        pairs = default_confusable_pairs(case.facet, small_world.value_names[case.facet])
        bad = excluded_values(small_world, case.facet, v, None, pairs)
        assert all(small_world.image(n).values[fi] not in bad for n in case.negatives)


def test_positive_salience_policy(small_world, small_bench):
    facets = small_world.facets
    for case in small_bench.cases:
        fi = facets.index(case.facet)
        s = small_world.image(case.positive).salience[fi]
        assert s == (1.0 if fi < len(facets) // 2 else 0.1)


def test_confusable_weathers():
    cfg = SyntheticWorldConfig(n_facets=4, values_per_facet=12, n_images=3000, seed=0,
                               facet_names=("animals", "scenes", "materials", "weathers"))
    w = generate_world(cfg)
    bench = generate_benchmark(w, GeneratorConfig(world=cfg, cases_per_facet={"weathers": 50}, seed=1,
                                                  positive_salience={"weathers": "any"}))
    names = w.value_names["weathers"]
    for c in bench.cases:
        pos = names[w.image(c.positive).values[3]]
        negs = {names[w.image(n).values[3]] for n in c.negatives}
        assert pos not in negs
        if pos == "sunny":
            assert "clear" not in negs and "warm" not in negs
        if pos == "rainy":
            assert not negs & {"cloudy", "stormy", "drizzly", "cold"}


def test_ordinal_margin():
    cfg = SyntheticWorldConfig(n_facets=2, values_per_facet=12, n_images=2500, seed=3,
                               facet_names=("scenes", "count_of_people"))
    w = generate_world(cfg)
    bench = generate_benchmark(w, GeneratorConfig(world=cfg, cases_per_facet={"count_of_people": 60}, seed=2,
                                                  positive_salience={"count_of_people": "any"}))
    assert bench.facet("count_of_people").kind == "ordinal"
    assert bench.facet("count_of_people").ordinal_margin == 3
    for c in bench.cases:
        v = w.image(c.positive).values[1]
        assert all(abs(w.image(n).values[1] - v) >= 3 for n in c.negatives)


def test_insufficient_negatives_and_skips(caplog):
    cfg = SyntheticWorldConfig(n_facets=2, values_per_facet=3, n_images=60, seed=0, facet_names=("scenes", "times"))
    w = generate_world(cfg)
    with pytest.raises(InsufficientNegatives) as ei:
        generate_benchmark(w, GeneratorConfig(world=cfg, cases_per_facet=5, negatives_per_case=99))
    assert ei.value.facet == "scenes" and ei.value.needed == 99
    cfg = SyntheticWorldConfig(n_facets=2, values_per_facet=5, n_images=400, seed=0,
                               facet_names=("scenes", "count_of_people"))
    w = generate_world(cfg)
    with caplog.at_level(logging.WARNING):
        b = generate_benchmark(w, GeneratorConfig(world=cfg, cases_per_facet=5, negatives_per_case=50,
                                                  ordinal_margins={"count_of_people": 3},
                                                  positive_salience={"count_of_people": "any"}))
    assert "never queried" in caplog.text
    for c in b.cases_for("count_of_people"):
        assert w.image(c.positive).values[1] in (0, 1, 3, 4)


def test_generator_config_validation(small_world):
    for kw in (dict(negatives_per_case=0), dict(cases_per_facet=0), dict(cases_per_facet={"nope": 3}),
               dict(positive_salience={"animals": "medium"}), dict(ordinal_margins={"animals": -1})):
        with pytest.raises(ConfigInvalid):
            generate_benchmark(small_world, GeneratorConfig(world=small_world.config, **kw))


def test_explicit_exclusivity(small_world):
    names = small_world.value_names["animals"]
    pairs = [(names[0], names[1])]
    b = generate_benchmark(small_world, GeneratorConfig(world=small_world.config, cases_per_facet={"animals": 20},
                                                        exclusivity={"animals": pairs}, seed=4))
    for c in b.cases:
        v = small_world.image(c.positive).values[0]
        negs = {small_world.image(n).values[0] for n in c.negatives}
        if v in (0, 1):
            assert not negs & {0, 1}
