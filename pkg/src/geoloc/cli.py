"""``geoloc`` command-line entry point.

Every subcommand accepts ``--config`` (a YAML document), ``--seed`` and
``--threads``; flags override the config file. Data goes to files or stdout,
logs and stage timings to stderr. Each run that writes outputs also writes a
run manifest next to them. Exit codes: 0 ok, 1 usage, 2 data error,
3 remote prior provider exhausted.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from geoloc import __version__
from geoloc.errors import ConfigError, GeolocError, IoFailure, RemoteProviderExhausted
from geoloc.evaluation import GroundTruth, engine_factory, evaluate, sweep, write_table
from geoloc.index import build_indexes, load_indexes, save_indexes
from geoloc.partition import CitiesDb, Partition, SubmapStrategy, build_cluster_partition, build_country_partition
from geoloc.pipeline import Engine, LocalizationResult, PipelineConfig, localize_batch
from geoloc.prior import PriorSource, make_provider, read_raw_responses, write_prior_file
from geoloc.store import MAGIC, open_store, read_ingest_manifest, write_store_arrays
from geoloc.synthetic import SyntheticSpec, generate_synthetic, load_bundle, write_bundle

log = logging.getLogger("geoloc")

CONFIG_VERSION = 1
CONFIG_KEYS = {"version", "seed", "threads", "pipeline", "prior", "synthetic", "grid"}


# --------------------------------------------------------------------------
# config and manifest


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {' '.join(str(exc).split())}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"config {path} has version {doc['version']}, expected {CONFIG_VERSION}")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config {path} has unknown keys {sorted(unknown)}")
    return doc


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    threads: int
    pipeline: dict | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        dt = time.perf_counter() - t0
        self.timings_s[name] = round(dt, 6)
        log.info("stage %s: %.3f s", name, dt)

    def write(self, path: Path) -> Path:
        doc = {k: v for k, v in self.__dict__.items()}
        path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def manifest_path(out: Path) -> Path:
    return out / "run_manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


@dataclass
class Context:
    args: argparse.Namespace
    config: dict
    seed: int
    threads: int

    def manifest(self) -> RunManifest:
        return RunManifest(self.args.command, self.args.config, self.seed, self.threads)


def _pipeline_config(ctx: Context, partition: Partition | None = None) -> PipelineConfig:
    doc = dict(ctx.config.get("pipeline") or {})
    a = ctx.args
    if partition is not None and "K" not in doc and "K" in partition.params:
        doc["K"] = partition.params["K"]
    for key, value in (("submap_strategy", a.strategy), ("rerank", a.rerank), ("top_p", a.top_p), ("K", a.K)):
        if value is not None:
            doc[key] = value
    if "submap_strategy" not in doc and partition is not None:
        doc["submap_strategy"] = partition.strategy.value
    return PipelineConfig.from_dict(doc)


def _prior_source(ctx: Context) -> PriorSource:
    if ctx.args.priors:
        return PriorSource(kind="file", path=ctx.args.priors, format=ctx.args.priors_format)
    doc = ctx.config.get("prior")
    if not doc:
        raise ConfigError("no prior source: pass --priors or set a 'prior' section in the config")
    return PriorSource.from_dict(doc)


def _load_images(directory: str | None) -> dict[int, bytes]:
    if directory is None:
        return {}
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.stem.isdigit():
            out[int(p.stem)] = p.read_bytes()
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    with m.stage("read_manifest"):
        ids, lats, lons, vectors = read_ingest_manifest(a.manifest, a.dimension)
    with m.stage("write_store"):
        write_store_arrays(a.out, ids, lats, lons, vectors, dimension=a.dimension, extractor_tag=a.tag)
    with open_store(a.out) as store:
        m.extra = {"records": len(store), "dimension": store.dimension, "fingerprint": store.fingerprint}
    m.inputs, m.outputs = {"manifest": a.manifest}, {"store": a.out}
    m.write(manifest_path(Path(a.out)))
    log.info("ingested %d records of dimension %d", m.extra["records"], m.extra["dimension"])
    return 0


def cmd_partition(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    strategy = SubmapStrategy(a.strategy)
    with open_store(a.store) as store:
        with m.stage("partition"):
            if strategy is SubmapStrategy.CLUSTER:
                K = a.K or (ctx.config.get("pipeline") or {}).get("K", 100)
                partition = build_cluster_partition(store, int(K), ctx.seed)
            else:
                if not a.cities:
                    raise ConfigError("--cities is required for country partitions")
                partition = build_country_partition(store, CitiesDb.load(a.cities))
    partition.save(a.out)
    sizes = [len(s) for s in partition.submaps]
    m.inputs = {"store": a.store, "cities": a.cities}
    m.outputs = {"partition": a.out}
    m.extra = {"strategy": strategy.value, "submaps": len(sizes), "min_size": min(sizes), "max_size": max(sizes)}
    m.write(manifest_path(Path(a.out)))
    log.info("%d submaps, sizes %d..%d", len(sizes), min(sizes), max(sizes))
    return 0


def cmd_index(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    with open_store(a.store) as store:
        partition = Partition.load(a.partition)
        with m.stage("build"):
            indexes = build_indexes(store, partition)
        with m.stage("write"):
            save_indexes(indexes, a.out, store.fingerprint)
    m.inputs, m.outputs = {"store": a.store, "partition": a.partition}, {"index": a.out}
    m.extra = {"submaps": len(indexes), "bytes": sum(ix.nbytes for ix in indexes)}
    m.write(manifest_path(Path(a.out)))
    return 0


def cmd_extract_prior(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    with m.stage("extract"):
        priors = read_raw_responses(a.responses)
        failures = write_prior_file(priors, a.out)
    summary = {"responses": len(priors), "parsed": len(priors) - failures, "parse_failures": failures}
    m.inputs, m.outputs, m.extra = {"responses": a.responses}, {"priors": a.out}, summary
    m.write(manifest_path(Path(a.out)))
    log.info("parse failures: %d of %d", failures, len(priors))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_localize(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    store = open_store(a.store)
    queries = open_store(a.queries)
    partition = Partition.load(a.partition) if a.partition else None
    config = _pipeline_config(ctx, partition)
    if config.submap_strategy is not SubmapStrategy.NONE and partition is None:
        raise ConfigError(f"strategy {config.submap_strategy.value} needs --partition")
    source = _prior_source(ctx)
    provider = make_provider(source)
    cities = CitiesDb.load(a.cities) if a.cities else None
    with m.stage("engine"):
        indexes = load_indexes(a.index, store.fingerprint) if a.index and partition is not None else None
        engine = Engine.build(store, provider, partition, cities=cities, indexes=indexes)
    with m.stage("localize"):
        results = localize_batch(queries.ids, queries.vectors, config, engine, _load_images(a.images),
                                 workers=ctx.threads)
    out = Path(a.out)
    with m.stage("write"), open(out, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")
    flagged: dict[str, int] = {}
    for r in results:
        for f in r.flags:
            flagged[f.value] = flagged.get(f.value, 0) + 1
    m.pipeline = config.to_dict()
    m.inputs = {"store": a.store, "queries": a.queries, "partition": a.partition, "index": a.index,
                "cities": a.cities, "prior_source": source.to_dict(), "images": a.images}
    m.outputs = {"results": a.out}
    m.extra = {"queries": len(results), "flags": dict(sorted(flagged.items())), "provider_tag": provider.tag,
               "store_fingerprint": store.fingerprint}
    exhausted = getattr(provider, "exhausted", 0)
    if exhausted:
        m.extra["remote_exhausted"] = exhausted
    m.write(manifest_path(out))
    for name, count in sorted(flagged.items()):
        log.info("%s: %d of %d queries", name, count, len(results))
    if exhausted:
        raise RemoteProviderExhausted(f"{exhausted} queries ran out of retries against {source.url}")
    return 0


def read_results(path: str | os.PathLike) -> list[LocalizationResult]:
    with open(path, encoding="utf-8") as fh:
        return [LocalizationResult.from_json(line) for line in fh if line.strip()]


def cmd_evaluate(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    results = read_results(a.results)
    truth = GroundTruth.load(a.truth)
    config, provider = None, ""
    upstream = manifest_path(Path(a.results))
    if upstream.is_file():
        doc = json.loads(upstream.read_text(encoding="utf-8"))
        if doc.get("pipeline"):
            config = PipelineConfig.from_dict(doc["pipeline"])
        provider = doc.get("extra", {}).get("provider_tag", "")
    elif ctx.config.get("pipeline"):
        config = PipelineConfig.from_dict(ctx.config["pipeline"])
    with m.stage("evaluate"):
        report = evaluate(results, truth, config=config, provider=provider)
    out = Path(a.out)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    csv_out = out.with_suffix(".csv")
    write_table([report], csv_out)
    m.pipeline = report.config or None
    m.inputs, m.outputs = {"results": a.results, "truth": a.truth}, {"report": a.out, "csv": str(csv_out)}
    m.write(manifest_path(out))
    print(json.dumps(report.to_dict()["accuracy"]))
    return 0


def cmd_synth(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    doc = dict(ctx.config.get("synthetic") or {})
    if a.spec:
        doc.update(load_yaml_mapping(a.spec))
    overrides = {"seed": ctx.seed if (a.seed is not None or "seed" not in doc) else None,
                 "n_reference": a.n_reference, "n_query": a.n_query, "dimension": a.dimension,
                 "sigma_km": a.sigma_km, "aliasing": a.aliasing}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    spec = SyntheticSpec.from_dict(doc)
    with m.stage("generate"):
        ds = generate_synthetic(spec)
    with m.stage("write"):
        out = write_bundle(ds, a.out)
    m.seed = spec.seed
    m.outputs = {"bundle": str(out)}
    m.extra = {"spec": spec.to_dict()}
    m.write(manifest_path(out))
    return 0


def load_yaml_mapping(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {' '.join(str(exc).split())}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must be a mapping")
    return doc


def expand_grid(doc: dict) -> list[PipelineConfig]:
    """Either an explicit ``configs`` list or axes whose product is taken."""
    if "configs" in doc:
        return [PipelineConfig.from_dict(c) for c in doc["configs"]]
    axes = {k: v if isinstance(v, list) else [v] for k, v in doc.items()}
    if not axes:
        raise ConfigError("empty sweep grid")
    keys = sorted(axes)
    configs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        cfg = PipelineConfig.from_dict(dict(zip(keys, combo)))
        if cfg not in configs:
            configs.append(cfg)
    return configs


def cmd_sweep(ctx: Context) -> int:
    a, m = ctx.args, ctx.manifest()
    grid = load_yaml_mapping(a.grid) if a.grid else ctx.config.get("grid")
    if not grid:
        raise ConfigError("no sweep grid: pass --grid or set a 'grid' section in the config")
    configs = expand_grid(grid)
    bundle = load_bundle(a.dataset)
    make = engine_factory(bundle.store, bundle.priors, bundle.cities, seed=ctx.seed)
    with m.stage("sweep"):
        reports = sweep(configs, make, bundle.query_ids, bundle.query_vectors, bundle.truth,
                        provider=bundle.priors.tag, workers=ctx.threads)
    prefix = Path(a.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_out, json_out = prefix.with_name(prefix.name + ".csv"), prefix.with_name(prefix.name + ".json")
    write_table(reports, csv_out, json_out)
    m.inputs, m.outputs = {"dataset": a.dataset, "grid": a.grid}, {"csv": str(csv_out), "json": str(json_out)}
    m.extra = {"configs": [c.to_dict() for c in configs]}
    m.write(prefix.with_name(prefix.name + ".manifest.json"))
    print(csv_out.read_text(encoding="utf-8"), end="")
    return 0


def cmd_inspect(ctx: Context) -> int:
    path = Path(ctx.args.path)
    if path.is_dir():
        if (path / "index.json").is_file():
            doc = json.loads((path / "index.json").read_text(encoding="utf-8"))
        else:
            bundle = load_bundle(path)
            doc = {"kind": "synthetic-bundle", "spec": bundle.spec.to_dict(), "reference": len(bundle.store),
                   "queries": len(bundle.queries), "store_fingerprint": bundle.store.fingerprint}
            bundle.close()
    else:
        with open(path, "rb") as fh:
            head = fh.read(len(MAGIC))
        if head == MAGIC:
            with open_store(path) as store:
                h = store.header
                doc = {"kind": "store", "format_version": h.format_version, "dimension": h.dimension,
                       "records": h.record_count, "extractor_tag": h.extractor_tag,
                       "fingerprint": store.fingerprint, **store.checksums()}
        else:
            p = Partition.load(path)
            sizes = [len(s) for s in p.submaps]
            doc = {"kind": "partition", "strategy": p.strategy.value, "submaps": len(sizes),
                   "min_size": min(sizes), "max_size": max(sizes), "params": p.params,
                   "store_fingerprint": p.store_fingerprint}
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# argument parsing


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config; command-line flags take precedence")
    common.add_argument("--seed", type=int, help="random seed (default: config seed or 0)")
    common.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = Parser(prog="geoloc", description="Geo-constrained descriptor retrieval.")
    parser.add_argument("--version", action="version", version=f"geoloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("ingest", parents=[common], help="build a store from a descriptor manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", type=int)
    p.add_argument("--tag", default="", help="extractor tag written into the header")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("partition", parents=[common], help="split a store into submaps")
    p.add_argument("store")
    p.add_argument("--strategy", choices=["cluster", "country"], default="cluster")
    p.add_argument("--K", type=int)
    p.add_argument("--cities")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("index", parents=[common], help="build and cache per-submap indexes")
    p.add_argument("store")
    p.add_argument("partition")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("extract-prior", parents=[common], help="parse raw model responses into priors")
    p.add_argument("responses")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_prior)

    p = sub.add_parser("localize", parents=[common], help="localize every query in a query store")
    p.add_argument("store")
    p.add_argument("--queries", required=True)
    p.add_argument("--priors", help="prior file (overrides the config 'prior' section)")
    p.add_argument("--priors-format", choices=["priors", "responses"], default="priors")
    p.add_argument("--partition")
    p.add_argument("--index", help="index cache directory from 'geoloc index'")
    p.add_argument("--cities")
    p.add_argument("--images", help="directory of <query_id>.<ext> images for a remote prior source")
    p.add_argument("--strategy", choices=[s.value for s in SubmapStrategy])
    p.add_argument("--rerank", type=_bool)
    p.add_argument("--top-p", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", parents=[common], help="accuracy at 1/25/200/750/2500 km")
    p.add_argument("results")
    p.add_argument("truth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark bundle")
    p.add_argument("--spec", help="YAML synthetic spec")
    p.add_argument("--n-reference", type=int)
    p.add_argument("--n-query", type=int)
    p.add_argument("--dimension", type=int)
    p.add_argument("--sigma-km", type=float)
    p.add_argument("--aliasing", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common], help="evaluate a grid of pipeline configs")
    p.add_argument("--grid", help="YAML grid (explicit 'configs' list or per-field axes)")
    p.add_argument("--dataset", required=True, help="synthetic bundle directory")
    p.add_argument("--out", required=True, help="output prefix for .csv and .json")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", parents=[common], help="describe a store, partition, index or bundle")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"geoloc: error: {type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, exc.exit_code)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="geoloc: %(levelname)s: %(message)s", force=True)
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        threads = args.threads or int(config.get("threads", 0)) or os.cpu_count() or 1
        if seed < 0 or threads < 1:
            raise ConfigError("--seed must be >= 0 and --threads >= 1")
        return args.func(Context(args, config, seed, threads))
    except GeolocError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(IoFailure(str(exc)), IoFailure.exit_code)


if __name__ == "__main__":
    sys.exit(main())
