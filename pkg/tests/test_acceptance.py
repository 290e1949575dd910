"""Acceptance gate: one test per headline criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are also
printed in the terminal summary under "acceptance criteria".
"""

import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from acceptance_log import criterion
from geo_fixtures import ANTIPODAL_KM, CITY_PAIRS
from geoloc.evaluation import engine_factory, sweep
from geoloc.geo import GeoPoint, haversine_km
from geoloc.index import build_global_index, search
from geoloc.oracle import brute_force_oracle
from geoloc.partition import CitiesDb, build_cluster_partition, build_country_partition, kmeans
from geoloc.pipeline import Engine, PipelineConfig, localize
from geoloc.prior import PriorStatus, extract_coordinates, priors_from_points
from geoloc.store import open_store, write_store_arrays
from geoloc.synthetic import SyntheticSpec, generate_synthetic, load_bundle, site_correct, write_bundle
from prior_fixtures import EXTRACTION_CASES

BENCH_SEEDS = (0, 1, 2, 3, 4)
TOP_P = (1, 5, 10, 25, 50, 100)


def random_points(rng, n):
    return [GeoPoint(float(a), float(b)) for a, b in zip(rng.uniform(-90, 90, n), rng.uniform(-180, 180, n))]


def test_geodesy_goldens():
    with criterion("geodesy goldens") as c:
        worst = max(abs(haversine_km(GeoPoint(*a), GeoPoint(*b)) - exp) for _, a, _, b, exp in CITY_PAIRS)
        assert len(CITY_PAIRS) == 20 and worst <= 0.5, worst
        anti = haversine_km(GeoPoint(0, 0), GeoPoint(0, 180))
        assert abs(anti - ANTIPODAL_KM) <= 0.01, anti
        rng = np.random.default_rng(2024)
        a, b, m = random_points(rng, 10_000), random_points(rng, 10_000), random_points(rng, 10_000)
        for p, q, r in zip(a, b, m):
            d_pq = haversine_km(p, q)
            assert d_pq == haversine_km(q, p)
            assert d_pq <= haversine_km(p, r) + haversine_km(r, q) + 1e-9
        assert c.elapsed < 1.0, c.elapsed
        c.detail = f"max golden error {worst:.2e} km, antipodal {anti:.4f} km, 10^4 pairs"


def test_retrieval_oracle_equivalence(tmp_path):
    with criterion("retrieval oracle equivalence") as c:
        rng = np.random.default_rng(7)
        worst_rel = 0.0
        for n in (1_000, 10_000):
            for d in (16, 128, 512):
                vecs = rng.standard_normal((n, d)).astype(np.float32)
                vecs[n // 2 : n // 2 + 20] = vecs[:20]  # exact duplicates exercise the id tie-break
                ids = rng.permutation(4 * n)[:n]
                path = tmp_path / f"s{n}_{d}.gpr"
                write_store_arrays(path, ids, rng.uniform(-90, 90, n), rng.uniform(-180, 180, n), vecs)
                store = open_store(path)
                index = build_global_index(store)
                near = vecs[rng.integers(n, size=50)] + 0.05 * rng.standard_normal((50, d)).astype(np.float32)
                queries = np.vstack([near, rng.standard_normal((50, d)).astype(np.float32)])
                for q in queries:
                    got, want = search(index, q, 50), brute_force_oracle(store, q, 50)
                    assert [x.id for x in got] == [x.id for x in want], (n, d)
                    for x, y in zip(got, want):
                        rel = abs(x.score - y.score) / max(abs(y.score), 1e-30)
                        worst_rel = max(worst_rel, rel)
                        assert rel <= 1e-5, (n, d, x, y)
                store.close()
        assert c.elapsed < 30.0, c.elapsed
        c.detail = f"6 configurations x 100 queries, max relative score gap {worst_rel:.1e}"


def test_partition_correctness(tmp_path):
    with criterion("partition correctness") as c:
        rng = np.random.default_rng(11)
        n = 10_000
        lats, lons = rng.uniform(-70, 70, n), rng.uniform(-180, 180, n)
        write_store_arrays(tmp_path / "p.gpr", rng.permutation(n), lats, lons,
                           rng.standard_normal((n, 4)).astype(np.float32))
        store = open_store(tmp_path / "p.gpr")
        part = build_cluster_partition(store, K=100, seed=0)
        members = np.concatenate([s.member_ids for s in part.submaps])
        assert len(part) == 100 and len(members) == n
        assert np.array_equal(np.sort(members), np.sort(store.ids))
        cents = np.array([s.centroid.as_tuple() for s in sorted(part.submaps, key=lambda s: s.submap_id)])
        label = np.empty(n, dtype=np.int64)
        for s in part.submaps:
            label[store.ordinals_of(s.member_ids)] = s.submap_id
        pts = np.column_stack((store.lats, store.lons))
        d2 = ((pts[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        assert np.all(d2[np.arange(n), label] <= d2.min(axis=1) + 1e-9)
        hist = part.inertia_history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:])), hist
        # the raw k-means routine reports the same final assignment
        assert kmeans(pts, 100, seed=0).inertia == pytest.approx(hist[-1])

        codes = [f"C{chr(65 + i % 26)}" for i in range(100)]
        cities = [(f"city{i}", p, codes[i]) for i, p in enumerate(random_points(rng, 100))]
        db = CitiesDb(cities)
        m = 1_000
        write_store_arrays(tmp_path / "c.gpr", np.arange(m), rng.uniform(-90, 90, m), rng.uniform(-180, 180, m),
                           np.zeros((m, 4), np.float32))
        small = open_store(tmp_path / "c.gpr")
        cpart = build_country_partition(small, db)
        country_of = {int(rid): s.country_code for s in cpart.submaps for rid in s.member_ids}
        assert len(country_of) == m
        for i in range(m):
            p = GeoPoint(float(small.lats[i]), float(small.lons[i]))
            nearest = min(cities, key=lambda city: (haversine_km(p, city[1]), city[2], city[0]))
            assert country_of[int(small.ids[i])] == nearest[2], i
        assert c.elapsed < 10.0, c.elapsed
        c.detail = f"K=100 over 10k points in {part.params['n_iter']} iterations, 1k country assignments"


def test_rerank_invariant(tmp_path):
    with criterion("re-ranking invariant") as c:
        rng = np.random.default_rng(13)
        worlds = []
        for w in range(4):
            n, d = 1_500, 8
            vecs = rng.standard_normal((n, d)).astype(np.float32)
            vecs[100:130] = vecs[:30]
            write_store_arrays(tmp_path / f"w{w}.gpr", rng.permutation(3 * n)[:n], rng.uniform(-80, 80, n),
                               rng.uniform(-180, 180, n), vecs)
            store = open_store(tmp_path / f"w{w}.gpr")
            worlds.append((store, build_cluster_partition(store, K=20, seed=w)))
        for case in range(1_000):
            store, part = worlds[case % 4]
            prior = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            if case % 2:
                query = store.vectors[rng.integers(len(store))] + 0.3 * rng.standard_normal(8).astype(np.float32)
            else:
                query = rng.standard_normal(8).astype(np.float32)
            strategy, p = ("none", "cluster")[case % 3 == 0], int(rng.integers(1, 101))
            engine = Engine.build(store, priors_from_points({1: prior}), part)
            on = localize(query, 1, PipelineConfig(strategy, True, p, K=20), engine)
            off = localize(query, 1, PipelineConfig(strategy, False, p, K=20), engine)

            # scope and top-p set, recomputed exhaustively
            if strategy == "cluster":
                subs = sorted(part.submaps, key=lambda s: s.submap_id)
                cd = [(prior.lat - s.centroid.lat) ** 2 + (prior.lon - s.centroid.lon) ** 2 for s in subs]
                scope = subs[int(np.argmin(cd))].member_ids
            else:
                scope = store.ids
            ords = store.ordinals_of(scope)
            diff = store.vectors[ords].astype(np.float64) - query.astype(np.float64)
            scores = np.float32((diff * diff).sum(axis=1))
            ranked = sorted(zip(scores.tolist(), store.ids[ords].tolist()))
            top = {rid for _, rid in ranked[:p]}
            assert {x.id for x in on.candidates} == top == {x.id for x in off.candidates}, case
            hav = {rid: haversine_km(prior, store.location_of(rid)) for rid in top}
            assert hav[on.best_id] == min(hav.values()), case
            assert off.best_id == ranked[0][1] and off.candidates[0].score == ranked[0][0], case
        c.detail = "1000 cases over none/cluster scopes, p in [1, 100]"


def test_aliasing_mechanism(tmp_path):
    with criterion("perceptual aliasing resolved by submap + rerank") as c:
        constrained, global_hits = 0, 0
        for seed in range(100):
            spec = SyntheticSpec(seed=seed, n_reference=1_000, n_query=1, dimension=32, n_regions=20,
                                 sites_per_region=5, aliasing=1, sigma_km=0.0, query_noise=0.0)
            ds = generate_synthetic(spec)
            b = load_bundle(write_bundle(ds, tmp_path / f"a{seed}"))
            make = engine_factory(b.store, b.priors, b.cities, seed=seed)
            src = int(ds.query_source[0])
            for cfg in (PipelineConfig("cluster", True, K=100), PipelineConfig("none", False)):
                res = localize(b.query_vectors[0], int(b.query_ids[0]), cfg, make(cfg))
                hit = site_correct(b.record_site, res.best_id, src)
                if cfg.submap_strategy == "cluster":
                    constrained += hit
                else:
                    global_hits += hit
            b.close()
        c.detail = f"cluster+rerank {constrained}/100 site-correct, global no-rerank {global_hits}/100"
        assert constrained == 100
        assert 35 <= global_hits <= 65


@pytest.fixture(scope="module")
def benchmarks(tmp_path_factory):
    """Default synthetic benchmark (10k references, sigma 50 km) for each seed."""
    out = {}
    for seed in BENCH_SEEDS:
        ds = generate_synthetic(SyntheticSpec(seed=seed))
        b = load_bundle(write_bundle(ds, tmp_path_factory.mktemp(f"bench{seed}")))
        out[seed] = (b, engine_factory(b.store, b.priors, b.cities, seed=seed))
    return out


def test_ablation_ordering(benchmarks):
    with criterion("ablation ordering at 200 km") as c:
        cfgs = [PipelineConfig("cluster", True), PipelineConfig("cluster", False), PipelineConfig("none", False)]
        rows = []
        for seed, (b, make) in benchmarks.items():
            full, submap, glob = (r.at(200.0) for r in sweep(cfgs, make, b.query_ids, b.query_vectors, b.truth))
            rows.append(f"s{seed}={full:.3f}/{submap:.3f}/{glob:.3f}")
            assert full >= submap >= glob, rows
        c.detail = "submap+rerank/submap/global: " + " ".join(rows)


def test_top_p_saturation(benchmarks):
    with criterion("top-p saturation at 25 km") as c:
        cfgs = [PipelineConfig("cluster", True, p) for p in TOP_P]
        curves = []
        for seed, (b, make) in benchmarks.items():
            acc = [r.at(25.0) for r in sweep(cfgs, make, b.query_ids, b.query_vectors, b.truth)]
            curves.append(f"s{seed}=" + "/".join(f"{a:.3f}" for a in acc))
            assert acc == sorted(acc), curves
            at = dict(zip(TOP_P, acc))
            assert at[100] - at[50] <= at[50] - at[10], curves
        c.detail = "p=" + "/".join(map(str, TOP_P)) + ": " + " ".join(curves)


def test_prior_extraction():
    with criterion("prior extraction fixtures") as c:
        agree = 0
        for text, expected in EXTRACTION_CASES:
            est = extract_coordinates(text)
            if expected is None:
                agree += est.status is PriorStatus.UNAVAILABLE and est.location is None
            else:
                agree += est.status is PriorStatus.PARSED and est.location.as_tuple() == pytest.approx(expected)
        c.detail = f"{agree}/{len(EXTRACTION_CASES)} agree"
        assert len(EXTRACTION_CASES) >= 25 and agree == len(EXTRACTION_CASES)


def cli_chain(work):
    work.mkdir()
    steps = [
        ["synth", "--seed", "0", "--out", "bundle"],
        ["partition", "bundle/reference.gpr", "--seed", "0", "--out", "part.json"],
        ["index", "bundle/reference.gpr", "part.json", "--out", "idx"],
        ["localize", "bundle/reference.gpr", "--queries", "bundle/queries.gpr", "--priors", "bundle/priors.csv",
         "--partition", "part.json", "--index", "idx", "--out", "results.jsonl"],
        ["evaluate", "results.jsonl", "bundle/truth.csv", "--out", "report.json"],
    ]
    for argv in steps:
        proc = subprocess.run([sys.executable, "-m", "geoloc", *argv], cwd=work, capture_output=True, text=True)
        assert proc.returncode == 0, (argv[0], proc.stderr)


def test_cli_end_to_end(tmp_path):
    with criterion("end-to-end CLI") as c:
        cli_chain(tmp_path / "a")
        first = c.elapsed
        assert first < 60.0, first
        report = json.loads((tmp_path / "a/report.json").read_text())
        acc = list(report["accuracy"].values())
        assert acc == sorted(acc) and report["total"] == 500
        cli_chain(tmp_path / "b")
        for name in ("results.jsonl", "report.json", "report.csv", "part.json", "idx/index.json"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name
        c.detail = f"chain {first:.1f} s, accuracy {acc}, rerun byte-identical"
