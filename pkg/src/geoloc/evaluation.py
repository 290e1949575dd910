"""Accuracy at fixed radii, configuration sweeps, and report tables."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from geoloc.errors import ConfigError, MissingGroundTruth
from geoloc.geo import GeoPoint, haversine_km
from geoloc.oracle import brute_force_oracle  # noqa: F401  re-exported for callers of this module
from geoloc.partition import SubmapStrategy, build_cluster_partition, build_country_partition
from geoloc.pipeline import Engine, Flag, LocalizationResult, PipelineConfig, localize_batch

THRESHOLDS_KM = (1.0, 25.0, 200.0, 750.0, 2500.0)
FALLBACK_FLAGS = frozenset({Flag.PRIOR_UNAVAILABLE, Flag.USED_COUNTRY_FALLBACK})


class GroundTruth(dict):
    """query id -> true location."""

    @classmethod
    def load(cls, path: str | os.PathLike) -> GroundTruth:
        """Read ``query_id, lat, lon`` lines (comma or tab separated, optional header)."""
        out = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = [p.strip() for p in line.replace("\t", ",").split(",")]
                try:
                    qid, lat, lon = int(parts[0]), float(parts[1]), float(parts[2])
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue
                    raise ConfigError(f"{path}:{lineno}: expected query_id, lat, lon") from None
                out[qid] = GeoPoint(lat, lon)
        return out

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("query_id,lat,lon\n")
            for qid in sorted(self):
                p = self[qid]
                fh.write(f"{qid},{p.lat!r},{p.lon!r}\n")


@dataclass
class EvalReport:
    accuracy: dict[float, float]
    total: int
    prior_failures: int
    fallbacks: int
    config: dict = field(default_factory=dict)
    provider: str = ""
    label: str = ""

    @property
    def thresholds(self) -> tuple[float, ...]:
        return tuple(sorted(self.accuracy))

    def at(self, threshold_km: float) -> float:
        return self.accuracy[float(threshold_km)]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "provider": self.provider,
            "total": self.total,
            "prior_failures": self.prior_failures,
            "fallbacks": self.fallbacks,
            "accuracy": {f"{t:g}km": self.accuracy[t] for t in self.thresholds},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> EvalReport:
        acc = {float(k.removesuffix("km")): float(v) for k, v in doc["accuracy"].items()}
        return cls(acc, doc["total"], doc["prior_failures"], doc["fallbacks"],
                   doc.get("config", {}), doc.get("provider", ""), doc.get("label", ""))

    def csv_header(self) -> list[str]:
        return ["label", *(f"acc@{t:g}km" for t in self.thresholds), "total", "prior_failures", "fallbacks"]

    def csv_row(self) -> list[str]:
        accs = [f"{self.accuracy[t]:.6f}" for t in self.thresholds]
        return [self.label, *accs, str(self.total), str(self.prior_failures), str(self.fallbacks)]


def errors_km(results: Sequence[LocalizationResult], truth: Mapping[int, GeoPoint]) -> np.ndarray:
    missing = [r.query_id for r in results if r.query_id not in truth]
    if missing:
        raise MissingGroundTruth(f"no ground truth for {len(missing)} queries, e.g. {missing[:5]}")
    return np.array([haversine_km(r.predicted_location, truth[r.query_id]) for r in results], dtype=np.float64)


def evaluate(
    results: Sequence[LocalizationResult],
    truth: Mapping[int, GeoPoint],
    thresholds: Iterable[float] = THRESHOLDS_KM,
    config: PipelineConfig | None = None,
    provider: str = "",
) -> EvalReport:
    """Fraction of queries within each radius, inclusive."""
    err = errors_km(results, truth)
    n = len(results)
    acc = {float(t): (float(np.count_nonzero(err <= t)) / n if n else 0.0) for t in thresholds}
    return EvalReport(
        accuracy=acc,
        total=n,
        prior_failures=sum(not r.prior.parsed for r in results),
        fallbacks=sum(bool(r.flags & FALLBACK_FLAGS) for r in results),
        config=config.to_dict() if config else {},
        provider=provider,
        label=config.label if config else "",
    )


def sweep(
    configs: Sequence[PipelineConfig],
    engines: Mapping[tuple, Engine] | Callable[[PipelineConfig], Engine],
    query_ids: Sequence[int],
    query_vectors: np.ndarray,
    truth: Mapping[int, GeoPoint],
    provider: str = "",
    workers: int = 1,
) -> list[EvalReport]:
    """One report per configuration.

    ``engines`` maps ``engine_key(config)`` to a ready engine, or is a callable
    taking a config and returning one; configurations that share a partition
    share an engine.
    """
    reports = []
    for cfg in configs:
        engine = engines(cfg) if callable(engines) else engines[engine_key(cfg)]
        results = localize_batch(query_ids, query_vectors, cfg, engine, workers=workers)
        reports.append(evaluate(results, truth, config=cfg, provider=provider))
    return reports


def engine_key(config: PipelineConfig) -> tuple:
    """Configurations with equal keys can reuse the same engine."""
    if config.submap_strategy is SubmapStrategy.CLUSTER:
        return ("cluster", config.K)
    return (config.submap_strategy.value,)


def engine_factory(store, priors, cities=None, seed: int = 0, threads: int = 1) -> Callable[[PipelineConfig], Engine]:
    """Build engines on demand, one per ``engine_key``."""
    cache: dict[tuple, Engine] = {}

    def get(config: PipelineConfig) -> Engine:
        key = engine_key(config)
        if key not in cache:
            strategy = config.submap_strategy
            if strategy is SubmapStrategy.CLUSTER:
                partition = build_cluster_partition(store, config.K, seed)
            elif strategy is SubmapStrategy.COUNTRY:
                if cities is None:
                    raise ConfigError("country submaps need a cities database")
                partition = build_country_partition(store, cities)
            else:
                partition = None
            cache[key] = Engine.build(store, priors, partition, cities=cities, threads=threads)
        return cache[key]

    return get


def write_table(
    reports: Sequence[EvalReport], csv_path: str | os.PathLike, json_path: str | os.PathLike | None = None
) -> None:
    if not reports:
        raise ConfigError("nothing to tabulate")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(reports[0].csv_header())
        for r in reports:
            w.writerow(r.csv_row())
    if json_path is None:
        return
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1)
        fh.write("\n")
