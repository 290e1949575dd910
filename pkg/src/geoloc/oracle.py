"""Brute-force reference search, kept separate from the index code path.

Distances come from a plain scalar double loop (compiled with numba) and the
ranking from a full Python sort of (score, id) tuples. Nothing here shares
code with ``geoloc.index``; the test suite relies on that independence.
"""

from __future__ import annotations

import numba
import numpy as np

from geoloc.errors import DimensionMismatch
from geoloc.geo import GeoPoint


@numba.njit(cache=True)
def _scalar_l2sq(vectors, query, out):
    n, d = vectors.shape
    for i in range(n):
        acc = 0.0
        for j in range(d):
            diff = np.float64(vectors[i, j]) - np.float64(query[j])
            acc += diff * diff
        out[i] = acc


def brute_force_oracle(store, query, p: int) -> list:
    """All N distances, fully sorted by (score, id), truncated to p."""
    from geoloc.index import Candidate  # result type only

    query = np.asarray(query, dtype=np.float32).reshape(-1)
    if query.shape[0] != store.dimension:
        raise DimensionMismatch(f"query has dimension {query.shape[0]}, store has {store.dimension}")
    n = len(store)
    out = np.empty(n, dtype=np.float64)
    if n:
        _scalar_l2sq(np.asarray(store.vectors), query, out)
    ranked = sorted((float(np.float32(out[i])), int(store.ids[i]), i) for i in range(n))
    return [
        Candidate(id=rid, score=score, location=GeoPoint(float(store.lats[i]), float(store.lons[i])))
        for score, rid, i in ranked[:p]
    ]
