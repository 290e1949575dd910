"""Exact top-p search under squared L2 distance.

Distances are accumulated in float64 over row blocks and rounded to float32
scores. Ranking is by (score, id) ascending, so results do not depend on the
block size or on how many threads scanned the blocks.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from geoloc.errors import DimensionMismatch, FingerprintMismatch, GeolocError, LengthMismatch
from geoloc.geo import GeoPoint
from geoloc.partition import Partition
from geoloc.store import StoreHandle, open_store, write_store_arrays

GLOBAL_SUBMAP_ID = 0xFFFFFFFF
BLOCK_ROWS = 4096
INDEX_CACHE_FORMAT = "geoloc-index-cache"


@dataclass(frozen=True)
class Candidate:
    id: int
    score: float
    location: GeoPoint | None
    distance_km: float | None = None


def l2_squared(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> np.float32:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise LengthMismatch(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    diff = u - v
    return np.float32(np.dot(diff, diff))


@dataclass
class SubmapIndex:
    submap_id: int
    row_ids: np.ndarray  # uint64, ascending
    vectors: np.ndarray  # (rows, d) float32, C-contiguous
    lats: np.ndarray
    lons: np.ndarray

    def __len__(self) -> int:
        return int(self.row_ids.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def nbytes(self) -> int:
        return self.vectors.nbytes + self.row_ids.nbytes + self.lats.nbytes + self.lons.nbytes

    def distances(self, query: np.ndarray, threads: int = 1, block_rows: int = BLOCK_ROWS) -> np.ndarray:
        """float64 squared distances from ``query`` to every row, in row order."""
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dimension:
            raise DimensionMismatch(f"query has dimension {q.shape[0]}, index has {self.dimension}")
        out = np.empty(len(self), dtype=np.float64)

        def scan(start: int) -> None:
            block = self.vectors[start : start + block_rows].astype(np.float64)
            block -= q
            out[start : start + block_rows] = np.einsum("ij,ij->i", block, block)

        starts = range(0, len(self), block_rows)
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(scan, starts))
        else:
            for s in starts:
                scan(s)
        return out

    def search(self, query: np.ndarray, p: int, threads: int = 1) -> list[Candidate]:
        return search(self, query, p, threads=threads)


def top_rows(scores: np.ndarray, ids: np.ndarray, p: int) -> np.ndarray:
    """Row positions of the p smallest (score, id) pairs, in ascending order."""
    n = scores.shape[0]
    if p >= n:
        pool = np.arange(n)
    else:
        kth = np.argpartition(scores, p - 1)[:p]
        # keep every row tied with the p-th score so the id tie-break is exact
        pool = np.flatnonzero(scores <= scores[kth].max())
    order = np.lexsort((ids[pool], scores[pool]))
    return pool[order[:p]]


def search(index: SubmapIndex, query: np.ndarray, p: int, threads: int = 1) -> list[Candidate]:
    """The min(p, rows) nearest rows, ascending by (score, id)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if len(index) == 0:
        return []
    scores = index.distances(query, threads=threads).astype(np.float32)
    rows = top_rows(scores, index.row_ids, p)
    return [
        Candidate(
            id=int(index.row_ids[r]),
            score=float(scores[r]),
            location=GeoPoint(float(index.lats[r]), float(index.lons[r])),
        )
        for r in rows
    ]


def _index_from_ordinals(store: StoreHandle, submap_id: int, ordinals: np.ndarray) -> SubmapIndex:
    ordinals = ordinals[np.argsort(store.ids[ordinals], kind="stable")]
    return SubmapIndex(
        submap_id=submap_id,
        row_ids=np.array(store.ids[ordinals], dtype=np.uint64),
        vectors=np.ascontiguousarray(store.vectors[ordinals], dtype=np.float32),
        lats=np.array(store.lats[ordinals]),
        lons=np.array(store.lons[ordinals]),
    )


def build_global_index(store: StoreHandle) -> SubmapIndex:
    return _index_from_ordinals(store, GLOBAL_SUBMAP_ID, np.arange(len(store)))


def build_indexes(store: StoreHandle, partition: Partition) -> list[SubmapIndex]:
    """One exact index per submap, rows in ascending id order."""
    if partition.store_fingerprint != store.fingerprint:
        raise FingerprintMismatch(
            f"partition built from store {partition.store_fingerprint[:12]}, got {store.fingerprint[:12]}"
        )
    return [_index_from_ordinals(store, s.submap_id, store.ordinals_of(s.member_ids)) for s in partition.submaps]


def save_indexes(indexes: Sequence[SubmapIndex], directory: str | os.PathLike, store_fingerprint: str) -> None:
    """Write one store-format file per submap plus an ``index.json`` listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for ix in indexes:
        name = f"submap_{ix.submap_id:010d}.gpr"
        write_store_arrays(directory / name, ix.row_ids, ix.lats, ix.lons, ix.vectors, dimension=ix.dimension)
        entries.append({"submap_id": ix.submap_id, "file": name, "rows": len(ix)})
    doc = {"format": INDEX_CACHE_FORMAT, "version": 1, "store_fingerprint": store_fingerprint, "submaps": entries}
    (directory / "index.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_indexes(directory: str | os.PathLike, store_fingerprint: str | None = None) -> list[SubmapIndex]:
    directory = Path(directory)
    doc = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    if doc.get("format") != INDEX_CACHE_FORMAT:
        raise GeolocError(f"{directory} is not an index cache")
    if store_fingerprint is not None and doc["store_fingerprint"] != store_fingerprint:
        raise FingerprintMismatch(f"index cache {directory} was built from a different store")
    out = []
    for e in doc["submaps"]:
        part = open_store(directory / e["file"])
        out.append(
            SubmapIndex(
                submap_id=int(e["submap_id"]),
                row_ids=np.array(part.ids, dtype=np.uint64),
                vectors=np.ascontiguousarray(part.vectors),
                lats=np.array(part.lats),
                lons=np.array(part.lons),
            )
        )
    return out
