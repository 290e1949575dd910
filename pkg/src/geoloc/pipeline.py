"""Per-query localisation: prior, submap, exact retrieval, geographic re-rank."""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from geoloc.errors import ConfigError, DimensionMismatch, InconsistentEngine
from geoloc.geo import GeoPoint, haversine_km
from geoloc.index import Candidate, SubmapIndex, build_global_index, build_indexes, search
from geoloc.partition import CitiesDb, Partition, SubmapStrategy, select_submap
from geoloc.prior import PriorEstimate, PriorProvider, PriorStatus
from geoloc.store import StoreHandle


class Flag(str, enum.Enum):
    USED_COUNTRY_FALLBACK = "UsedCountryFallback"
    PRIOR_UNAVAILABLE = "PriorUnavailable-GlobalSearch"
    SUBMAP_SMALLER_THAN_P = "SubmapSmallerThanP"


@dataclass(frozen=True)
class PipelineConfig:
    submap_strategy: SubmapStrategy = SubmapStrategy.CLUSTER
    rerank: bool = True
    top_p: int = 50
    K: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "submap_strategy", SubmapStrategy(self.submap_strategy))
        if isinstance(self.rerank, str) or not isinstance(self.rerank, (bool, np.bool_)):
            raise ConfigError(f"rerank must be a boolean, got {self.rerank!r}")
        if int(self.top_p) < 1:
            raise ConfigError(f"top_p must be >= 1, got {self.top_p}")
        if int(self.K) < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")

    @property
    def label(self) -> str:
        scope = self.submap_strategy.value
        if self.submap_strategy is SubmapStrategy.CLUSTER:
            scope = f"cluster{self.K}"
        return f"{scope}-{'rerank' if self.rerank else 'norerank'}-p{self.top_p}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["submap_strategy"] = self.submap_strategy.value
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> PipelineConfig:
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad pipeline config {doc!r}: {exc}") from None


@dataclass
class LocalizationResult:
    query_id: int
    best_id: int
    predicted_location: GeoPoint
    candidates: list[Candidate]
    prior: PriorEstimate
    flags: frozenset[Flag] = field(default_factory=frozenset)
    submap_id: int | None = None

    def to_json(self) -> str:
        prior = self.prior
        doc = {
            "query_id": self.query_id,
            "best_id": self.best_id,
            "lat": self.predicted_location.lat,
            "lon": self.predicted_location.lon,
            "prior_lat": prior.location.lat if prior.location else None,
            "prior_lon": prior.location.lon if prior.location else None,
            "prior_status": prior.status.value,
            "submap_id": self.submap_id,
            "flags": sorted(f.value for f in self.flags),
            "candidates": [[c.id, c.score, c.distance_km] for c in self.candidates],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, line: str) -> LocalizationResult:
        doc = json.loads(line)
        if doc["prior_status"] == PriorStatus.PARSED.value:
            prior = PriorEstimate(GeoPoint(doc["prior_lat"], doc["prior_lon"]), PriorStatus.PARSED)
        else:
            prior = PriorEstimate.unavailable()
        # candidate geotags are not serialised; only the best match's is kept
        cands = [Candidate(int(i), float(s), None, d) for i, s, d in doc["candidates"]]
        return cls(
            query_id=int(doc["query_id"]),
            best_id=int(doc["best_id"]),
            predicted_location=GeoPoint(doc["lat"], doc["lon"]),
            candidates=cands,
            prior=prior,
            flags=frozenset(Flag(f) for f in doc["flags"]),
            submap_id=doc.get("submap_id"),
        )


def rerank(candidates: Sequence[Candidate], prior: GeoPoint) -> list[Candidate]:
    """Order by great-circle distance to the prior, then score, then id."""
    scored = [
        Candidate(c.id, c.score, c.location, haversine_km(prior, c.location)) for c in candidates
    ]
    return sorted(scored, key=lambda c: (c.distance_km, c.score, c.id))


@dataclass
class Engine:
    """Immutable bundle of everything a query needs.

    ``indexes`` maps submap id to its exact index; the global index is built
    on first use when a configuration searches the whole store.
    """

    store: StoreHandle
    priors: PriorProvider
    partition: Partition | None = None
    indexes: dict[int, SubmapIndex] = field(default_factory=dict)
    cities: CitiesDb | None = None
    threads: int = 1
    _global: SubmapIndex | None = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        store: StoreHandle,
        priors: PriorProvider,
        partition: Partition | None = None,
        cities: CitiesDb | None = None,
        indexes: Sequence[SubmapIndex] | None = None,
        threads: int = 1,
    ) -> Engine:
        if partition is not None and partition.store_fingerprint != store.fingerprint:
            raise InconsistentEngine("partition was built from a different store")
        if partition is not None and indexes is None:
            indexes = build_indexes(store, partition)
        engine = cls(store, priors, partition, {ix.submap_id: ix for ix in indexes or ()}, cities, threads)
        if partition is not None:
            missing = {s.submap_id for s in partition.submaps} - set(engine.indexes)
            if missing:
                raise InconsistentEngine(f"no index for submaps {sorted(missing)[:5]}")
        return engine

    @property
    def global_index(self) -> SubmapIndex:
        if self._global is None:
            self._global = build_global_index(self.store)
        return self._global

    def check(self, config: PipelineConfig) -> None:
        strategy = config.submap_strategy
        if strategy is SubmapStrategy.NONE:
            return
        if self.partition is None:
            raise InconsistentEngine(f"strategy {strategy.value} needs a partition")
        if self.partition.strategy is not strategy:
            raise InconsistentEngine(
                f"config asks for {strategy.value} submaps, partition is {self.partition.strategy.value}"
            )
        if strategy is SubmapStrategy.CLUSTER and self.partition.params.get("K", config.K) != config.K:
            raise InconsistentEngine(f"config K={config.K}, partition K={self.partition.params['K']}")
        if strategy is SubmapStrategy.COUNTRY and self.cities is None:
            raise InconsistentEngine("country submaps need a cities database")


def localize(
    query_vector: np.ndarray,
    query_id: int,
    config: PipelineConfig,
    engine: Engine,
    image: bytes | None = None,
) -> LocalizationResult:
    query_vector = np.asarray(query_vector, dtype=np.float32).reshape(-1)
    if query_vector.shape[0] != engine.store.dimension:
        raise DimensionMismatch(
            f"query {query_id} has dimension {query_vector.shape[0]}, store has {engine.store.dimension}"
        )
    engine.check(config)
    prior = engine.priors.get(query_id, image)
    flags: set[Flag] = set()
    submap_id = None

    if config.submap_strategy is SubmapStrategy.NONE:
        scope = engine.global_index
        if config.rerank and not prior.parsed:
            flags.add(Flag.PRIOR_UNAVAILABLE)
    elif not prior.parsed:
        scope = engine.global_index
        flags.add(Flag.PRIOR_UNAVAILABLE)
    else:
        selection = select_submap(engine.partition, prior.location, engine.cities)
        submap_id = selection.submap_id
        scope = engine.indexes[submap_id]
        if selection.used_country_fallback:
            flags.add(Flag.USED_COUNTRY_FALLBACK)

    if len(scope) < config.top_p:
        flags.add(Flag.SUBMAP_SMALLER_THAN_P)
    candidates = search(scope, query_vector, config.top_p, threads=engine.threads)
    if config.rerank and prior.parsed:
        candidates = rerank(candidates, prior.location)
    best = candidates[0]
    return LocalizationResult(
        query_id=int(query_id),
        best_id=best.id,
        predicted_location=best.location,
        candidates=candidates,
        prior=prior,
        flags=frozenset(flags),
        submap_id=submap_id,
    )


def localize_batch(
    query_ids: Sequence[int],
    query_vectors: np.ndarray,
    config: PipelineConfig,
    engine: Engine,
    images: dict[int, bytes] | None = None,
    workers: int = 1,
) -> list[LocalizationResult]:
    """Localise many queries; output is sorted by query id whatever ``workers`` is."""
    engine.check(config)
    images = images or {}
    order = np.argsort(np.asarray(query_ids, dtype=np.uint64), kind="stable")

    def one(i: int) -> LocalizationResult:
        qid = int(query_ids[i])
        return localize(query_vectors[i], qid, config, engine, images.get(qid))

    if workers > 1:
        engine.global_index  # lazy build is not thread-safe; do it up front
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, order))
    return [one(i) for i in order]
