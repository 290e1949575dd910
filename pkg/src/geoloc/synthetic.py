"""Desk-scale synthetic benchmark with controllable perceptual aliasing.

The world is a set of regions, each holding a few sites. Every site has a
visual theme, and themes repeat across the globe, so places far apart can
look alike. A reference descriptor is

    theme_center[theme(site)] + site_offset[site] + record_noise

and a query is a copy of one reference descriptor plus query noise, with that
reference's geotag as ground truth. Aliasing pairs go one step further: two
records at sites at least ``alias_min_km`` apart share a byte-identical
descriptor. Priors are the truth displaced by exactly ``sigma_km`` along a
random bearing.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from geoloc.errors import SpecInvalid
from geoloc.evaluation import GroundTruth
from geoloc.geo import GeoPoint, destination, haversine_km, haversine_km_many
from geoloc.partition import CitiesDb
from geoloc.prior import FilePriorProvider, read_prior_file
from geoloc.store import StoreHandle, open_store, write_store_arrays

BUNDLE_FILES = ("reference.gpr", "queries.gpr", "priors.csv", "truth.csv", "cities.tsv", "records.csv",
                "aliasing.csv", "spec.json")


@dataclass(frozen=True)
class Site:
    location: GeoPoint
    spread_km: float
    region: int = 0


@dataclass(frozen=True)
class SyntheticSpec:
    n_reference: int = 10_000
    n_query: int = 500
    dimension: int = 128
    seed: int = 0
    sigma_km: float = 50.0
    aliasing: int = 25
    # explicit geometry; when empty a layout is drawn from the fields below
    sites: tuple[Site, ...] = ()
    n_regions: int = 40
    sites_per_region: int = 10
    region_radius_km: float = 400.0
    region_separation_km: float = 1500.0
    site_separation_km: float = 150.0
    site_spread_km: float = 3.0
    # descriptor model
    n_themes: int = 8
    regional_theme_prob: float = 0.6
    theme_scale: float = 1.0
    site_scale: float = 0.15
    record_scale: float = 0.25
    query_noise: float = 1.5
    alias_min_km: float = 2500.0
    prior_failure_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(self.sites))
        for name in ("n_reference", "n_query", "dimension", "n_regions", "sites_per_region", "n_themes"):
            if int(getattr(self, name)) < 1:
                raise SpecInvalid(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("sigma_km", "aliasing", "seed", "region_radius_km", "site_spread_km", "site_scale",
                     "record_scale", "query_noise", "theme_scale", "site_separation_km", "region_separation_km"):
            if getattr(self, name) < 0:
                raise SpecInvalid(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("regional_theme_prob", "prior_failure_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecInvalid(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.n_reference < self.n_sites:
            raise SpecInvalid(f"n_reference={self.n_reference} is below the site count {self.n_sites}")
        if self.aliasing > self.n_query:
            raise SpecInvalid(f"aliasing={self.aliasing} exceeds n_query={self.n_query}")
        if 2 * self.aliasing > self.n_reference:
            raise SpecInvalid(f"{self.aliasing} aliasing pairs need {2 * self.aliasing} records")

    @property
    def n_sites(self) -> int:
        return len(self.sites) if self.sites else self.n_regions * self.sites_per_region

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sites"] = [{"lat": s.location.lat, "lon": s.location.lon, "spread_km": s.spread_km, "region": s.region}
                      for s in self.sites]
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> SyntheticSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SpecInvalid(f"unknown synthetic spec keys {sorted(unknown)}")
        doc = dict(doc)
        try:
            doc["sites"] = tuple(
                Site(GeoPoint(s["lat"], s["lon"]), float(s.get("spread_km", 3.0)), int(s.get("region", i)))
                for i, s in enumerate(doc.get("sites", ()))
            )
            return cls(**doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecInvalid(f"bad synthetic spec: {exc}") from None


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    sites: list[Site]
    site_theme: np.ndarray
    ids: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    vectors: np.ndarray
    record_site: np.ndarray
    query_ids: np.ndarray
    query_vectors: np.ndarray
    query_source: np.ndarray  # reference id each query was copied from
    truth: GroundTruth
    priors: dict[int, GeoPoint]
    aliased_pairs: list[tuple[int, int]] = field(default_factory=list)

    def cities(self) -> CitiesDb:
        """One city per site, named after it, with a two-letter code per region."""
        return CitiesDb([(f"site{i:04d}", s.location, region_code(s.region)) for i, s in enumerate(self.sites)])

    def site_of(self, record_id: int) -> int:
        return int(self.record_site[np.flatnonzero(self.ids == np.uint64(record_id))[0]])


def region_code(region: int) -> str:
    if not 0 <= region < 26 * 26:
        raise SpecInvalid(f"region index {region} has no two-letter code")
    return chr(65 + region // 26) + chr(65 + region % 26)


def _random_point(rng: np.random.Generator, lat_min: float = -55.0, lat_max: float = 65.0) -> GeoPoint:
    # uniform on the sphere within the latitude band
    z = rng.uniform(np.sin(np.radians(lat_min)), np.sin(np.radians(lat_max)))
    return GeoPoint(float(np.degrees(np.arcsin(z))), float(rng.uniform(-180.0, 180.0)))


def _far_enough(p: GeoPoint, others: list[GeoPoint], min_km: float) -> bool:
    if not others:
        return True
    lats = np.array([o.lat for o in others])
    lons = np.array([o.lon for o in others])
    return bool(haversine_km_many(p.lat, p.lon, lats, lons).min() >= min_km)


def draw_layout(spec: SyntheticSpec, rng: np.random.Generator, max_tries: int = 10_000) -> list[Site]:
    """Regions with rejection-sampled separation, then sites inside each region."""
    if spec.sites:
        return list(spec.sites)
    centers: list[GeoPoint] = []
    tries = 0
    while len(centers) < spec.n_regions:
        tries += 1
        if tries > max_tries:
            raise SpecInvalid(f"cannot place {spec.n_regions} regions {spec.region_separation_km} km apart")
        c = _random_point(rng)
        if _far_enough(c, centers, spec.region_separation_km):
            centers.append(c)
    sites: list[Site] = []
    placed: list[GeoPoint] = []
    for r, c in enumerate(centers):
        tries = 0
        for _ in range(spec.sites_per_region):
            while True:
                tries += 1
                if tries > max_tries:
                    raise SpecInvalid(f"cannot place {spec.sites_per_region} sites in region {r}")
                p = destination(c, rng.uniform(0, 360), spec.region_radius_km * np.sqrt(rng.random()))
                if _far_enough(p, placed, spec.site_separation_km):
                    break
            placed.append(p)
            sites.append(Site(p, spec.site_spread_km, r))
    return sites


def _scatter(site: Site, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lats, lons = np.empty(n), np.empty(n)
    bearings = rng.uniform(0, 360, n)
    dists = site.spread_km * np.sqrt(rng.random(n))
    for i in range(n):
        p = destination(site.location, bearings[i], dists[i])
        lats[i], lons[i] = p.lat, p.lon
    return lats, lons


def _plant_aliases(spec, rng, lats, lons, vectors) -> list[tuple[int, int]]:
    """Pairs of row positions whose descriptors are made identical."""
    n = len(lats)
    used = np.zeros(n, dtype=bool)
    pairs = []
    for _ in range(spec.aliasing):
        for _attempt in range(100):
            a = int(rng.integers(n))
            if used[a]:
                continue
            far = np.flatnonzero((haversine_km_many(lats[a], lons[a], lats, lons) >= spec.alias_min_km) & ~used)
            if far.size:
                b = int(far[rng.integers(far.size)])
                break
        else:
            raise SpecInvalid(f"cannot find records {spec.alias_min_km} km apart for aliasing")
        used[a] = used[b] = True
        vectors[b] = vectors[a]
        pairs.append((a, b))
    return pairs


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic in ``spec``; separate random streams per stage.

    Geometry, descriptors, aliasing, queries and priors draw from independent
    child seeds, so changing e.g. ``sigma_km`` leaves the reference set intact.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(6)
    r_layout, r_desc, r_alias, r_query, r_prior, r_ids = (np.random.default_rng(s) for s in streams)

    sites = draw_layout(spec, r_layout)
    n_sites = len(sites)
    regions = sorted({s.region for s in sites})
    home_theme = {r: int(r_layout.integers(spec.n_themes)) for r in regions}
    site_theme = np.array([
        home_theme[s.region] if r_layout.random() < spec.regional_theme_prob else int(r_layout.integers(spec.n_themes))
        for s in sites
    ])

    # records per site as even as possible
    counts = np.full(n_sites, spec.n_reference // n_sites)
    counts[: spec.n_reference % n_sites] += 1
    record_site = np.repeat(np.arange(n_sites), counts)
    lats, lons = np.empty(spec.n_reference), np.empty(spec.n_reference)
    start = 0
    for s, c in enumerate(counts):
        lats[start : start + c], lons[start : start + c] = _scatter(sites[s], int(c), r_layout)
        start += c

    d = spec.dimension
    themes = r_desc.normal(0.0, spec.theme_scale, (spec.n_themes, d))
    offsets = r_desc.normal(0.0, spec.site_scale, (n_sites, d))
    noise = r_desc.normal(0.0, spec.record_scale, (spec.n_reference, d))
    vectors = (themes[site_theme[record_site]] + offsets[record_site] + noise).astype(np.float32)

    pair_rows = _plant_aliases(spec, r_alias, lats, lons, vectors)
    # shuffled ids make the id tie-break between duplicates a coin flip
    ids = r_ids.permutation(spec.n_reference).astype(np.uint64)

    aliased = np.zeros(spec.n_reference, dtype=bool)
    sources = []
    for a, b in pair_rows:
        aliased[a] = aliased[b] = True
        sources.append((a, b)[int(r_query.integers(2))])
    pool = np.flatnonzero(~aliased)
    n_rest = spec.n_query - len(sources)
    sources.extend(r_query.choice(pool, size=n_rest, replace=n_rest > pool.size).tolist())
    sources = np.array(sources, dtype=np.int64)
    qnoise = r_query.normal(0.0, spec.query_noise, (spec.n_query, d))
    query_vectors = (vectors[sources].astype(np.float64) + qnoise).astype(np.float32)
    query_ids = np.arange(spec.n_query, dtype=np.uint64)

    truth = GroundTruth()
    priors: dict[int, GeoPoint] = {}
    bearings = r_prior.uniform(0.0, 360.0, spec.n_query)
    fails = r_prior.random(spec.n_query) < spec.prior_failure_rate
    for q, row in enumerate(sources):
        t = GeoPoint(float(lats[row]), float(lons[row]))
        truth[q] = t
        if not fails[q]:
            priors[q] = t if spec.sigma_km == 0 else destination(t, bearings[q], spec.sigma_km)

    return SyntheticDataset(
        spec=spec,
        sites=sites,
        site_theme=site_theme,
        ids=ids,
        lats=lats,
        lons=lons,
        vectors=vectors,
        record_site=record_site,
        query_ids=query_ids,
        query_vectors=query_vectors,
        query_source=ids[sources],
        truth=truth,
        priors=priors,
        aliased_pairs=[(int(ids[a]), int(ids[b])) for a, b in pair_rows],
    )


# --------------------------------------------------------------------------
# bundle on disk


@dataclass
class Bundle:
    directory: Path
    spec: SyntheticSpec
    store: StoreHandle
    queries: StoreHandle
    priors: FilePriorProvider
    truth: GroundTruth
    cities: CitiesDb
    record_site: dict[int, int]
    aliased_pairs: list[tuple[int, int]]

    @property
    def query_ids(self) -> np.ndarray:
        return self.queries.ids

    @property
    def query_vectors(self) -> np.ndarray:
        return self.queries.vectors

    def close(self) -> None:
        self.store.close()
        self.queries.close()


def write_bundle(ds: SyntheticDataset, directory: str | os.PathLike) -> Path:
    """Write every dataset file; identical datasets give byte-identical files."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"synthetic-seed{ds.spec.seed}"
    write_store_arrays(out / "reference.gpr", ds.ids, ds.lats, ds.lons, ds.vectors, extractor_tag=tag)
    zeros = np.zeros(len(ds.query_ids))
    # query geotags are unknown at localisation time; truth lives in truth.csv
    write_store_arrays(out / "queries.gpr", ds.query_ids, zeros, zeros, ds.query_vectors, extractor_tag=tag)
    with open(out / "priors.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("query_id,lat,lon\n")
        for q in sorted(ds.priors):
            fh.write(f"{q},{ds.priors[q].lat!r},{ds.priors[q].lon!r}\n")
    ds.truth.save(out / "truth.csv")
    ds.cities().save(out / "cities.tsv")
    with open(out / "records.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "site", "theme", "region"])
        for rid, s in sorted(zip(ds.ids.tolist(), ds.record_site.tolist())):
            w.writerow([rid, s, int(ds.site_theme[s]), ds.sites[s].region])
    with open(out / "aliasing.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("id_a,id_b\n")
        for a, b in ds.aliased_pairs:
            fh.write(f"{a},{b}\n")
    (out / "spec.json").write_text(json.dumps(ds.spec.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_bundle(directory: str | os.PathLike) -> Bundle:
    d = Path(directory)
    missing = [f for f in BUNDLE_FILES if not (d / f).exists()]
    if missing:
        raise SpecInvalid(f"{d} is not a synthetic bundle; missing {missing}")
    spec = SyntheticSpec.from_dict(json.loads((d / "spec.json").read_text(encoding="utf-8")))
    record_site = {}
    with open(d / "records.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            record_site[int(row["id"])] = int(row["site"])
    pairs = []
    with open(d / "aliasing.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append((int(row["id_a"]), int(row["id_b"])))
    return Bundle(
        directory=d,
        spec=spec,
        store=open_store(d / "reference.gpr"),
        queries=open_store(d / "queries.gpr"),
        priors=FilePriorProvider(read_prior_file(d / "priors.csv"), tag="priors:priors.csv"),
        truth=GroundTruth.load(d / "truth.csv"),
        cities=CitiesDb.load(d / "cities.tsv"),
        record_site=record_site,
        aliased_pairs=pairs,
    )


def site_correct(record_site: dict[int, int] | SyntheticDataset, best_id: int, source_id: int) -> bool:
    """Whether the predicted record sits at the same site as the query's source."""
    if isinstance(record_site, SyntheticDataset):
        return record_site.site_of(best_id) == record_site.site_of(source_id)
    return record_site[best_id] == record_site[source_id]


def alias_separation_km(ds: SyntheticDataset) -> list[float]:
    out = []
    for a, b in ds.aliased_pairs:
        ia = int(np.flatnonzero(ds.ids == np.uint64(a))[0])
        ib = int(np.flatnonzero(ds.ids == np.uint64(b))[0])
        out.append(haversine_km(GeoPoint(ds.lats[ia], ds.lons[ia]), GeoPoint(ds.lats[ib], ds.lons[ib])))
    return out
