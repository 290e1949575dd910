"""Geographic partitioning of a store into submaps.

Two strategies: country submaps from nearest-city reverse geocoding, and
k-means clusters over raw (lat, lon) degree pairs. Either way the result is a
disjoint cover of the store's ids with no empty submap.
"""

from __future__ import annotations

import csv
import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from geoloc.errors import ConfigError, EmptyStore, GeolocError, KTooLarge
from geoloc.geo import GeoPoint, haversine_km_many, to_unit_vectors
from geoloc.store import StoreHandle

PARTITION_FORMAT = "geoloc-partition"
PARTITION_VERSION = 1


class SubmapStrategy(str, enum.Enum):
    NONE = "none"
    COUNTRY = "country"
    CLUSTER = "cluster"


# --------------------------------------------------------------------------
# reverse geocoding


class CitiesDb:
    """Nearest-city lookup under great-circle distance.

    Entries are kept sorted by (country_code, name) so that the lowest index
    among equidistant cities is the deterministic winner.
    """

    def __init__(self, entries: Sequence[tuple[str, GeoPoint, str]]):
        if not entries:
            raise ConfigError("cities database is empty")
        for name, _, code in entries:
            if len(code) != 2 or not (code.isascii() and code.isalpha() and code.isupper()):
                raise ConfigError(f"bad country code {code!r} for {name!r}")
        ordered = sorted(entries, key=lambda e: (e[2], e[0]))
        self.names = [e[0] for e in ordered]
        self.codes = [e[2] for e in ordered]
        self.lats = np.array([e[1].lat for e in ordered], dtype=np.float64)
        self.lons = np.array([e[1].lon for e in ordered], dtype=np.float64)
        self._tree = cKDTree(to_unit_vectors(self.lats, self.lons))

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def load(cls, path: str | os.PathLike) -> CitiesDb:
        """Read a UTF-8 TSV of ``name, lat, lon, country_code`` (one header line allowed)."""
        entries = []
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not row or not "".join(row).strip():
                    continue
                if len(row) < 4:
                    raise ConfigError(f"{path}:{lineno}: expected 4 tab-separated columns")
                try:
                    lat, lon = float(row[1]), float(row[2])
                except ValueError:
                    if lineno == 1:
                        continue
                    raise ConfigError(f"{path}:{lineno}: unparseable coordinates") from None
                entries.append((row[0], GeoPoint(lat, lon), row[3].strip()))
        return cls(entries)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["name", "lat", "lon", "country_code"])
            for name, lat, lon, code in zip(self.names, self.lats, self.lons, self.codes):
                w.writerow([name, repr(float(lat)), repr(float(lon)), code])

    def nearest_indices(self, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
        lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
        xyz = to_unit_vectors(lats, lons)
        if len(self) == 1:
            return np.zeros(len(lats), dtype=np.int64)
        dist, idx = self._tree.query(xyz, k=2)
        out = idx[:, 0].astype(np.int64)
        # chord distance is monotone in arc length, so only near-ties need
        # the haversine comparison with the (country_code, name) tie-break
        tie = dist[:, 1] <= dist[:, 0] * (1 + 1e-9) + 1e-12
        for i in np.flatnonzero(tie):
            cand = np.array(sorted(self._tree.query_ball_point(xyz[i], dist[i, 0] * (1 + 1e-9) + 1e-12)))
            cand = np.union1d(cand, idx[i, :1]).astype(np.int64)
            d = haversine_km_many(lats[i], lons[i], self.lats[cand], self.lons[cand])
            out[i] = cand[np.flatnonzero(d == d.min())[0]]
        return out

    def countries(self, lats: np.ndarray, lons: np.ndarray) -> list[str]:
        return [self.codes[i] for i in self.nearest_indices(lats, lons)]


def reverse_geocode(point: GeoPoint, db: CitiesDb) -> str:
    """Country code of the haversine-nearest city."""
    return db.codes[int(db.nearest_indices(point.lat, point.lon)[0])]


# --------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Submap:
    submap_id: int
    member_ids: np.ndarray
    country_code: str | None = None
    centroid: GeoPoint | None = None
    # arithmetic mean of member coordinates; used by the country fallback
    member_mean: GeoPoint | None = None

    def __len__(self) -> int:
        return int(self.member_ids.shape[0])

    @property
    def representative(self) -> str | GeoPoint:
        return self.country_code if self.country_code is not None else self.centroid


@dataclass
class Partition:
    strategy: SubmapStrategy
    submaps: list[Submap]
    store_fingerprint: str
    params: dict = field(default_factory=dict)
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._by_country = {s.country_code: s.submap_id for s in self.submaps if s.country_code}
        self._by_id = {s.submap_id: s for s in self.submaps}

    def __len__(self) -> int:
        return len(self.submaps)

    def submap(self, submap_id: int) -> Submap:
        return self._by_id[submap_id]

    def submap_for_country(self, code: str) -> int | None:
        return self._by_country.get(code)

    def to_json(self) -> dict:
        subs = []
        for s in self.submaps:
            entry: dict = {"submap_id": s.submap_id}
            if s.country_code is not None:
                entry["country_code"] = s.country_code
            if s.centroid is not None:
                entry["centroid"] = [s.centroid.lat, s.centroid.lon]
            if s.member_mean is not None:
                entry["member_mean"] = [s.member_mean.lat, s.member_mean.lon]
            entry["member_ids"] = [int(x) for x in s.member_ids]
            subs.append(entry)
        return {
            "format": PARTITION_FORMAT,
            "version": PARTITION_VERSION,
            "strategy": self.strategy.value,
            "store_fingerprint": self.store_fingerprint,
            "params": self.params,
            "inertia_history": self.inertia_history,
            "submaps": subs,
        }

    @classmethod
    def from_json(cls, doc: dict) -> Partition:
        if doc.get("format") != PARTITION_FORMAT:
            raise GeolocError("not a partition file")
        if doc.get("version") != PARTITION_VERSION:
            raise GeolocError(f"unsupported partition version {doc.get('version')}")
        subs = []
        for e in doc["submaps"]:
            subs.append(
                Submap(
                    submap_id=int(e["submap_id"]),
                    member_ids=np.array(e["member_ids"], dtype=np.uint64),
                    country_code=e.get("country_code"),
                    centroid=GeoPoint(*e["centroid"]) if "centroid" in e else None,
                    member_mean=GeoPoint(*e["member_mean"]) if "member_mean" in e else None,
                )
            )
        return cls(
            strategy=SubmapStrategy(doc["strategy"]),
            submaps=subs,
            store_fingerprint=doc["store_fingerprint"],
            params=doc.get("params", {}),
            inertia_history=[float(x) for x in doc.get("inertia_history", [])],
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Partition:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _member_mean(store: StoreHandle, ordinals: np.ndarray) -> GeoPoint:
    return GeoPoint(float(np.mean(store.lats[ordinals])), float(np.mean(store.lons[ordinals])))


def build_country_partition(store: StoreHandle, db: CitiesDb) -> Partition:
    if len(store) == 0:
        raise EmptyStore(f"{store.path} has no records")
    city = db.nearest_indices(store.lats, store.lons)
    codes = np.array(db.codes, dtype=object)[city]
    submaps = []
    for sid, code in enumerate(sorted(set(codes.tolist()))):
        ordinals = np.flatnonzero(codes == code)
        submaps.append(
            Submap(
                submap_id=sid,
                member_ids=np.sort(store.ids[ordinals]),
                country_code=code,
                member_mean=_member_mean(store, ordinals),
            )
        )
    return Partition(SubmapStrategy.COUNTRY, submaps, store.fingerprint, {"cities": len(db)})


# --------------------------------------------------------------------------
# k-means over raw degrees


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list[float]
    n_iter: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _assign(points: np.ndarray, centroids: np.ndarray, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(points.shape[0], dtype=np.int64)
    d2 = np.empty(points.shape[0], dtype=np.float64)
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        dist = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        lab = dist.argmin(axis=1)  # first minimum = smallest cluster index
        labels[start : start + chunk] = lab
        d2[start : start + chunk] = dist[np.arange(block.shape[0]), lab]
    return labels, d2


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for _ in range(1, k):
        total = closest.sum()
        if total > 0.0:
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
            while closest[idx] == 0.0:  # guard against landing on a zero-weight slot
                idx -= 1
        else:
            free = np.flatnonzero(~taken)
            idx = int(free[rng.integers(free.shape[0])])
        chosen.append(idx)
        taken[idx] = True
        np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1), out=closest)
    return points[chosen].copy()


def _repair_empty(points, centroids, labels, d2) -> None:
    """Reseed empty clusters from the point farthest from its centroid, in place.

    Only the reseeded centroid changes, so points strictly closer to it move
    over and every other label stays argmin-optimal.
    """
    k = centroids.shape[0]
    for _ in range(points.shape[0] + k):
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.shape[0] == 0:
            return
        target = int(empty[0])
        eligible = counts[labels] > 1
        far = int(np.argmax(np.where(eligible, d2, -1.0)))
        centroids[target] = points[far]
        to_new = ((points - points[far]) ** 2).sum(axis=1)
        moved = to_new < d2
        moved[far] = True
        labels[moved] = target
        d2[moved] = to_new[moved]
    raise GeolocError("k-means empty-cluster repair did not converge")


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding under squared Euclidean distance.

    Stops once the summed squared centroid displacement drops below ``tol``
    or after ``max_iter`` iterations. ``inertia_history`` holds the inertia of
    every assignment step, ending with the final assignment.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise EmptyStore("no points to cluster")
    if not 1 <= k <= n:
        raise KTooLarge(f"K={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels, d2 = _assign(points, centroids)
        _repair_empty(points, centroids, labels, d2)
        history.append(float(d2.sum()))
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        updated = sums / counts[:, None]
        shift = float(((updated - centroids) ** 2).sum())
        centroids = updated
        if shift < tol:
            break
    labels, d2 = _assign(points, centroids)
    _repair_empty(points, centroids, labels, d2)
    history.append(float(d2.sum()))
    return KMeansResult(centroids, labels, history, n_iter)


def build_cluster_partition(store: StoreHandle, K: int, seed: int) -> Partition:
    if len(store) == 0:
        raise EmptyStore(f"{store.path} has no records")
    if K > len(store):
        raise KTooLarge(f"K={K} exceeds record count {len(store)}")
    coords = np.column_stack((store.lats, store.lons))
    result = kmeans(coords, K, seed)
    submaps = []
    for sid in range(K):
        ordinals = np.flatnonzero(result.labels == sid)
        c = result.centroids[sid]
        submaps.append(
            Submap(
                submap_id=sid,
                member_ids=np.sort(store.ids[ordinals]),
                centroid=GeoPoint(float(c[0]), float(c[1])),
                member_mean=_member_mean(store, ordinals),
            )
        )
    return Partition(
        SubmapStrategy.CLUSTER,
        submaps,
        store.fingerprint,
        {"K": K, "seed": seed, "n_iter": result.n_iter},
        result.inertia_history,
    )


# --------------------------------------------------------------------------
# query-time selection


class SubmapSelection(NamedTuple):
    submap_id: int
    used_country_fallback: bool = False


def select_submap(partition: Partition, prior: GeoPoint, db: CitiesDb | None = None) -> SubmapSelection:
    if not partition.submaps:
        raise EmptyStore("partition has no submaps")
    ordered = sorted(partition.submaps, key=lambda s: s.submap_id)
    if partition.strategy is SubmapStrategy.CLUSTER:
        cents = np.array([s.centroid.as_tuple() for s in ordered])
        d2 = ((cents - np.array(prior.as_tuple())) ** 2).sum(axis=1)
        return SubmapSelection(ordered[int(np.argmin(d2))].submap_id)
    if partition.strategy is SubmapStrategy.COUNTRY:
        if db is None:
            raise ConfigError("country submap selection needs a cities database")
        sid = partition.submap_for_country(reverse_geocode(prior, db))
        if sid is not None:
            return SubmapSelection(sid)
        means = np.array([s.member_mean.as_tuple() for s in ordered])
        d = haversine_km_many(prior.lat, prior.lon, means[:, 0], means[:, 1])
        return SubmapSelection(ordered[int(np.argmin(d))].submap_id, used_country_fallback=True)
    raise ConfigError(f"cannot select a submap for strategy {partition.strategy.value}")
