"""Command-line interface.

    facetret synth gen --out DIR
    facetret index build --provider SPEC --benchmark B [--prompt ID] --out FILE
    facetret prompt gen --facet NAME --answers a,b
    facetret prompt select --query TEXT [--registry R]
    facetret eval run --mode {baseline,prompted,selected,approx} [...]
    facetret sweep --ks 5,10,20,40,100 --seeds 5
    facetret report merge A.csv B.csv --out merged.csv

Provider specs: ``synthetic:WORLD.json``, ``file:DIR`` or ``http:DIM`` (URL from
FACET_EMBEDDER_URL). Without ``--benchmark``/``--provider`` a default synthetic
world is generated in memory.

Exit status: 0 success, 1 validation error, 2 I/O or transport error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import kernels
from .approx import k_sweep
from .benchmark import BenchmarkSet, load_benchmark, per_facet_report, save_benchmark
from .errors import ConfigInvalid, FacetError, FormatError, StoreIOError, ValidationError
from .harness import (
    EvalMode,
    RunManifest,
    run_baseline,
    run_linear_approx,
    run_preprocessed_selected,
    run_prompted_gt,
    write_reports,
)
from .prompts import (
    DEFAULT_WRAPPER,
    HttpTextGenClient,
    PromptRegistry,
    assemble_prompt,
    default_registry,
    generate_question,
    load_registry,
    save_registry,
    select_prompt,
)
from .providers import (
    GENERAL_TAG,
    QUERIES_TAG,
    FileProvider,
    HttpEmbedderProvider,
    SyntheticProvider,
    build_store,
    embed_case_queries,
    prompt_tag,
)
from .store import EmbeddingStore, default_store_name, ensure_dir, store_save
from .synth import GeneratorConfig, generate_benchmark
from .world import SyntheticWorld, SyntheticWorldConfig, generate_world

log = logging.getLogger("facetret")

MODES = {
    "baseline": EvalMode.BASELINE,
    "prompted": EvalMode.PROMPTED_GT,
    "selected": EvalMode.PREPROCESSED_SELECTED,
    "approx": EvalMode.LINEAR_APPROX,
}


CONFIG_SECTIONS = {"world", "benchmark", "eval", "costs"}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- configuration -----------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix == ".toml":
            try:
                import tomllib
            except ImportError:  # Python < 3.11
                import tomli as tomllib
            cfg = tomllib.loads(raw.decode("utf-8"))
        else:
            cfg = json.loads(raw)
    except ValueError as exc:
        raise FormatError(f"bad config {p}: {exc}") from exc
    if not isinstance(cfg, dict) or not all(isinstance(v, dict) for v in cfg.values()):
        raise ConfigInvalid(f"{p}: expected sections of key/value settings")
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise ConfigInvalid(f"{p}: unknown sections {sorted(unknown)}")
    costs_config(cfg)
    return cfg


def world_config(cfg: dict, args) -> SyntheticWorldConfig:
    d = dict(cfg.get("world", {}))
    for key, attr in (
        ("n_images", "images"),
        ("n_facets", "facets"),
        ("values_per_facet", "values"),
        ("noise_scale", "noise"),
        ("seed", "world_seed"),
    ):
        val = getattr(args, attr, None)
        if val is not None:
            d[key] = val
    return SyntheticWorldConfig.from_json(d)


def generator_config(cfg: dict, world: SyntheticWorld, args) -> GeneratorConfig:
    d = dict(cfg.get("benchmark", {}))
    if getattr(args, "cases_per_facet", None) is not None:
        d["cases_per_facet"] = args.cases_per_facet
    if getattr(args, "negatives", None) is not None:
        d["negatives_per_case"] = args.negatives
    if getattr(args, "bench_seed", None) is not None:
        d["seed"] = args.bench_seed
    unknown = set(d) - (set(GeneratorConfig.__dataclass_fields__) - {"world"})
    if unknown:
        raise ConfigInvalid(f"unknown benchmark settings {sorted(unknown)}")
    return GeneratorConfig(world=world.config, **d)


def costs_config(cfg: dict) -> dict:
    c = cfg.get("costs", {})
    bad = set(c) - {"v", "t", "F"}
    if bad:
        raise ConfigInvalid(f"unknown cost keys {sorted(bad)}")
    try:
        out = {k: float(v) for k, v in c.items()}
    except (TypeError, ValueError):
        raise ConfigInvalid(f"cost values must be numbers, got {c}") from None
    if any(not v >= 0 for v in out.values()):
        raise ConfigInvalid("cost values must be non-negative")
    return out


def make_provider(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        return SyntheticProvider(SyntheticWorld.load(arg))
    if kind == "file":
        return FileProvider(arg)
    if kind == "http":
        try:
            dim = int(arg)
        except ValueError:
            raise UsageError("http provider spec is http:DIM") from None
        return HttpEmbedderProvider(dim)
    raise UsageError(f"unknown provider spec {spec!r}")


def resolve_inputs(args, cfg) -> tuple[BenchmarkSet, object, str, str]:
    """Benchmark and provider from flags, or a default synthetic world."""
    if args.benchmark and args.provider:
        provider = make_provider(args.provider)
        return load_benchmark(args.benchmark), provider, args.benchmark, args.provider
    if args.benchmark or args.provider:
        raise UsageError("--benchmark and --provider must be given together")
    world = generate_world(world_config(cfg, args))
    bench = generate_benchmark(world, generator_config(cfg, world, args))
    return bench, SyntheticProvider(world), "<generated>", "synthetic:<generated>"


def resolve_registry(args, bench: BenchmarkSet) -> PromptRegistry:
    if args.registry:
        return load_registry(args.registry)
    return default_registry().subset([f.name for f in bench.facets])


def parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


# --- commands ----------------------------------------------------------------


def cmd_synth_gen(args) -> int:
    cfg = load_config(args.config)
    world = generate_world(world_config(cfg, args))
    bench = generate_benchmark(world, generator_config(cfg, world, args))
    out = ensure_dir(args.out)
    world.save(out / "world.json")
    save_benchmark(bench, out / "benchmark.jsonl")
    registry = default_registry().subset(world.facets)
    save_registry(registry, out / "registry.json")
    if not args.no_stores:
        provider = SyntheticProvider(world)
        stores = ensure_dir(out / "stores")
        ids = bench.image_ids()
        store_save(build_store(provider, ids), stores / default_store_name(GENERAL_TAG))
        q = embed_case_queries(provider, bench.cases)
        store_save(EmbeddingStore([c.case_id for c in bench.cases], q, QUERIES_TAG, dim=provider.dim),
                   stores / default_store_name(QUERIES_TAG))
        for p in registry:
            store_save(build_store(provider, ids, p), stores / default_store_name(prompt_tag(p.prompt_id)))
    print(f"wrote {len(world.images)} images, {len(bench.cases)} cases to {out}")
    return 0


def cmd_index_build(args) -> int:
    provider = make_provider(args.provider)
    bench = load_benchmark(args.benchmark)
    ids = bench.image_ids()
    if args.prompt in (None, GENERAL_TAG):
        store = build_store(provider, ids)
    else:
        registry = load_registry(args.registry) if args.registry else default_registry()
        store = build_store(provider, ids, registry.get(args.prompt))
    store_save(store, args.out)
    print(f"wrote {store!r} to {args.out}")
    return 0


def cmd_prompt_gen(args) -> int:
    answers = [a.strip() for a in args.answers.split(",") if a.strip()]
    generator = HttpTextGenClient() if args.external else None
    question = generate_question(args.facet, answers, generator)
    print(json.dumps({"question": question, "full_prompt": assemble_prompt(question, args.wrapper)}))
    return 0


def cmd_prompt_select(args) -> int:
    registry = load_registry(args.registry) if args.registry else default_registry()
    selector = HttpTextGenClient() if args.external else None
    outcome = select_prompt(args.query, registry, selector, fallback_lexical=args.fallback_lexical)
    print(json.dumps({"chosen": outcome.chosen, "method": outcome.method, "raw_response": outcome.raw_response}))
    return 0


def cmd_eval_run(args) -> int:
    cfg = load_config(args.config)
    ev = cfg.get("eval", {})
    unknown = set(ev) - {"mode", "k_sample", "seed", "seeds", "workers"}
    if unknown:
        raise ConfigInvalid(f"unknown eval settings {sorted(unknown)}")
    mode_name = args.mode or ev.get("mode")
    if mode_name not in MODES:
        raise UsageError(f"--mode must be one of {sorted(MODES)}")
    mode = MODES[mode_name]
    k_sample = args.k_sample if args.k_sample is not None else int(ev.get("k_sample", 100))
    seed = args.seed if args.seed is not None else int(ev.get("seed", 0))
    n_seeds = args.seeds if args.seeds is not None else int(ev.get("seeds", 1))
    workers = args.workers if args.workers is not None else int(ev.get("workers", 1))
    if mode is EvalMode.LINEAR_APPROX and k_sample < 1:
        raise ValidationError(f"--k-sample must be >= 1 for approx mode, got {k_sample}")
    if n_seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    costs = costs_config(cfg)
    bench, provider, bench_src, provider_src = resolve_inputs(args, cfg)
    registry = resolve_registry(args, bench)
    out = ensure_dir(args.out or f"runs/{mode.value}")
    manifest = RunManifest(
        mode=mode.value, benchmark=bench_src, provider=provider_src, registry=args.registry,
        seed=seed, seeds=list(range(seed, seed + n_seeds)), Ks=[k_sample] if mode is EvalMode.LINEAR_APPROX else None,
        workers=workers, costs=costs or None, backend=kernels.BACKEND,
    )
    extra = {}
    if mode is EvalMode.BASELINE:
        records, ledger = run_baseline(bench, provider, costs=costs, workers=workers)
    elif mode is EvalMode.PROMPTED_GT:
        records, ledger = run_prompted_gt(bench, provider, registry, costs=costs, workers=workers)
    elif mode is EvalMode.PREPROCESSED_SELECTED:
        selector = HttpTextGenClient() if args.external_selector else None
        records, ledger, acc = run_preprocessed_selected(
            bench, provider, registry, selector, fallback_lexical=args.fallback_lexical, costs=costs, workers=workers
        )
        extra["selection_accuracy"] = acc
    else:
        records, ledger = [], None
        for s in manifest.seeds:
            recs, led = run_linear_approx(bench, provider, registry, k_sample, s, costs=costs, workers=workers)
            if n_seeds > 1:
                manifest.outputs[f"seed_{s}"] = write_reports(out / f"seed_{s}", recs, bench, led)
            records, ledger = records + recs, led
    manifest.outputs.update(write_reports(out, records, bench, ledger, extra=extra))
    manifest.outputs["manifest"] = str(out / "manifest.json")
    manifest.write(out / "manifest.json")
    print(per_facet_report(records, bench, (1, 5)).to_csv(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    Ks = parse_ints(args.ks)
    if args.seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    seeds = list(range(args.seed, args.seed + args.seeds))
    bench, provider, bench_src, provider_src = resolve_inputs(args, cfg)
    registry = resolve_registry(args, bench)
    result = k_sweep(provider, bench, registry, Ks, seeds)
    out = ensure_dir(args.out)
    try:
        (out / "sweep.csv").write_text(result.to_csv(), encoding="utf-8")
        (out / "sweep_aggregated.csv").write_text(result.to_aggregated_csv(), encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(str(exc)) from exc
    RunManifest(
        mode="sweep", benchmark=bench_src, provider=provider_src, registry=args.registry,
        seed=args.seed, seeds=seeds, Ks=Ks, backend=kernels.BACKEND,
        outputs={"sweep_csv": str(out / "sweep.csv"), "aggregated_csv": str(out / "sweep_aggregated.csv")},
    ).write(out / "manifest.json")
    print(result.to_aggregated_csv(), end="")
    return 0


def cmd_report_merge(args) -> int:
    header, rows = None, []
    for path in args.inputs:
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                h = next(reader, None)
                if h is None:
                    raise FormatError(f"{path} is empty")
                if header is None:
                    header = h
                elif h != header:
                    raise FormatError(f"{path} has columns {h}, expected {header}")
                rows.extend(reader)
        except OSError as exc:
            raise StoreIOError(f"cannot read {path}: {exc}") from exc
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise StoreIOError(f"cannot write {args.out}: {exc}") from exc
    print(f"merged {len(rows)} rows into {args.out}")
    return 0


# --- parser ------------------------------------------------------------------


def _world_flags(p):
    p.add_argument("--config", help="TOML or JSON file with [world] [benchmark] [eval] [costs]")
    p.add_argument("--images", type=int, help="synthetic world size")
    p.add_argument("--facets", type=int, help="number of facets")
    p.add_argument("--values", type=int, help="values per facet")
    p.add_argument("--noise", type=float, help="noise scale epsilon")
    p.add_argument("--world-seed", type=int)
    p.add_argument("--bench-seed", type=int)
    p.add_argument("--cases-per-facet", type=int)
    p.add_argument("--negatives", type=int)


def _input_flags(p):
    p.add_argument("--benchmark", help="benchmark JSONL")
    p.add_argument("--provider", help="synthetic:WORLD.json | file:DIR | http:DIM")
    p.add_argument("--registry", help="prompt registry JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="facetret", description="Attribute-focused text-to-image retrieval harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth").add_subparsers(dest="action", required=True, parser_class=_Parser)
    gen = synth.add_parser("gen", help="generate world, benchmark, registry and store fixtures")
    gen.add_argument("--out", required=True)
    gen.add_argument("--no-stores", action="store_true", help="skip the file-provider fixture stores")
    _world_flags(gen)
    gen.set_defaults(func=cmd_synth_gen)

    index = sub.add_parser("index").add_subparsers(dest="action", required=True, parser_class=_Parser)
    build = index.add_parser("build", help="embed a benchmark's image pool into a store file")
    build.add_argument("--provider", required=True)
    build.add_argument("--benchmark", required=True)
    build.add_argument("--registry")
    build.add_argument("--prompt", help="prompt_id, or 'general' (default)")
    build.add_argument("--out", required=True)
    build.set_defaults(func=cmd_index_build)

    prompt = sub.add_parser("prompt").add_subparsers(dest="action", required=True, parser_class=_Parser)
    pg = prompt.add_parser("gen", help="write an attribute question and assemble the full prompt")
    pg.add_argument("--facet", required=True)
    pg.add_argument("--answers", required=True, help="comma-separated example answers")
    pg.add_argument("--wrapper", default=DEFAULT_WRAPPER)
    pg.add_argument("--external", action="store_true", help="use the FACET_LLM_URL generator")
    pg.set_defaults(func=cmd_prompt_gen)
    ps = prompt.add_parser("select", help="choose a registry prompt for a query")
    ps.add_argument("--query", required=True)
    ps.add_argument("--registry")
    ps.add_argument("--external", action="store_true", help="use the FACET_LLM_URL selector")
    ps.add_argument("--fallback-lexical", action="store_true")
    ps.set_defaults(func=cmd_prompt_select)

    ev = sub.add_parser("eval").add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = ev.add_parser("run", help="evaluate one retrieval mode")
    run.add_argument("--mode", choices=sorted(MODES))
    run.add_argument("--k-sample", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--seeds", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--out")
    run.add_argument("--external-selector", action="store_true")
    run.add_argument("--fallback-lexical", action="store_true")
    _input_flags(run)
    _world_flags(run)
    run.set_defaults(func=cmd_eval_run)

    sw = sub.add_parser("sweep", help="linear-approximation recall across sample sizes")
    sw.add_argument("--ks", default="5,10,20,40,100")
    sw.add_argument("--seeds", type=int, default=5)
    sw.add_argument("--seed", type=int, default=0, help="first seed")
    sw.add_argument("--out", default="runs/sweep")
    _input_flags(sw)
    _world_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report").add_subparsers(dest="action", required=True, parser_class=_Parser)
    merge = rep.add_parser("merge", help="concatenate CSV reports with identical columns")
    merge.add_argument("inputs", nargs="+")
    merge.add_argument("--out", required=True)
    merge.set_defaults(func=cmd_report_merge)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except FacetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
