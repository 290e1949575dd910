"""Binary descriptor store.

Layout (all little-endian)::

    0   8s   magic  b"GPRSTORE"
    8   u32  format version (1)
    12  u32  dimension d
    16  u64  record count N
    24  32s  extractor tag, UTF-8, NUL padded
    56       N x (u64 id, f64 lat, f64 lon)
    ...      N x d f32 vector block

Vectors are read through a read-only memory map, so scans over the vector
block do not copy the file into memory.
"""

from __future__ import annotations

import csv
import hashlib
import mmap
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from geoloc.errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateId,
    IoFailure,
    NonFiniteVector,
    OutOfRangeLatitude,
    StoreError,
    TruncatedFile,
    UnknownId,
    UnsupportedVersion,
)
from geoloc.geo import GeoPoint, wrap_longitude

MAGIC = b"GPRSTORE"
FORMAT_VERSION = 1
TAG_BYTES = 32
HEADER_STRUCT = struct.Struct("<8sIIQ32s")
HEADER_SIZE = HEADER_STRUCT.size  # 56
GEOTAG_DTYPE = np.dtype([("id", "<u8"), ("lat", "<f8"), ("lon", "<f8")])


@dataclass(frozen=True)
class DescriptorRecord:
    id: int
    vector: np.ndarray
    location: GeoPoint
    source_tag: str = ""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DescriptorRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.location == other.location
            and self.source_tag == other.source_tag
            and self.vector.dtype == other.vector.dtype
            and self.vector.tobytes() == other.vector.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class StoreHeader:
    dimension: int
    record_count: int
    extractor_tag: str = ""
    format_version: int = FORMAT_VERSION
    magic: bytes = MAGIC

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            self.magic, self.format_version, self.dimension, self.record_count, _encode_tag(self.extractor_tag)
        )

    @property
    def file_size(self) -> int:
        return HEADER_SIZE + self.record_count * (GEOTAG_DTYPE.itemsize + 4 * self.dimension)


def _encode_tag(tag: str) -> bytes:
    raw = tag.encode("utf-8")
    if len(raw) > TAG_BYTES:
        raise StoreError(f"extractor tag longer than {TAG_BYTES} bytes: {tag!r}")
    if b"\x00" in raw:
        raise StoreError("extractor tag may not contain NUL")
    return raw.ljust(TAG_BYTES, b"\x00")


def _validate_arrays(ids: np.ndarray, lats: np.ndarray, lons: np.ndarray, vectors: np.ndarray, dimension: int):
    if dimension < 1:
        raise DimensionMismatch(f"dimension must be >= 1, got {dimension}")
    n = ids.shape[0]
    if vectors.ndim != 2 or vectors.shape != (n, dimension):
        raise DimensionMismatch(f"vector block has shape {vectors.shape}, expected ({n}, {dimension})")
    if lats.shape != (n,) or lons.shape != (n,):
        raise StoreError("geotag arrays must have one entry per id")
    if n != np.unique(ids).shape[0]:
        uniq, counts = np.unique(ids, return_counts=True)
        raise DuplicateId(f"duplicate id {int(uniq[counts > 1][0])}")
    if not np.isfinite(vectors).all():
        bad = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
        raise NonFiniteVector(f"record {int(ids[bad])} has a non-finite component")
    if n and (not np.isfinite(lats).all() or np.abs(lats).max() > 90.0):
        raise OutOfRangeLatitude("latitude outside [-90, 90] in geotag table")
    if n and not ((lons >= -180.0) & (lons < 180.0)).all():
        raise StoreError("longitudes must be normalized into [-180, 180)")


def write_store_arrays(
    path: str | os.PathLike,
    ids: Sequence[int] | np.ndarray,
    lats: Sequence[float] | np.ndarray,
    lons: Sequence[float] | np.ndarray,
    vectors: np.ndarray,
    dimension: int | None = None,
    extractor_tag: str = "",
) -> StoreHeader:
    """Write a store from column arrays. Longitudes are wrapped into [-180, 180)."""
    ids = np.asarray(ids, dtype=np.uint64).reshape(-1)
    lats = np.asarray(lats, dtype=np.float64).reshape(-1)
    lons = np.array(lons, dtype=np.float64).reshape(-1)
    outside = (lons < -180.0) | (lons >= 180.0)
    for i in np.flatnonzero(outside):
        lons[i] = wrap_longitude(float(lons[i]))
    vectors = np.asarray(vectors)
    if dimension is None:
        if vectors.ndim != 2:
            raise DimensionMismatch("cannot infer dimension from a non-2D vector block")
        dimension = vectors.shape[1]
    if vectors.size == 0 and ids.shape[0] == 0:
        vectors = np.zeros((0, dimension), dtype=np.float32)
    if vectors.dtype != np.float32:
        vectors = vectors.astype(np.float32)
    _validate_arrays(ids, lats, lons, vectors, dimension)

    header = StoreHeader(dimension=dimension, record_count=int(ids.shape[0]), extractor_tag=extractor_tag)
    table = np.empty(ids.shape[0], dtype=GEOTAG_DTYPE)
    table["id"], table["lat"], table["lon"] = ids, lats, lons
    tmp = Path(f"{os.fspath(path)}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header.pack())
            fh.write(table.tobytes())
            fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoFailure(f"cannot write store {path}: {exc}") from exc
    return header


def write_store(
    records: Iterable[DescriptorRecord],
    dimension: int,
    path: str | os.PathLike,
    extractor_tag: str | None = None,
) -> StoreHeader:
    """Write records in the given order.

    The file carries one store-wide extractor tag; when ``extractor_tag`` is
    omitted it is taken from the records, which must then agree.
    """
    records = list(records)
    for rec in records:
        if np.asarray(rec.vector).reshape(-1).shape[0] != dimension:
            raise DimensionMismatch(
                f"record {rec.id} has length {np.asarray(rec.vector).size}, expected {dimension}"
            )
    if extractor_tag is None:
        tags = {rec.source_tag for rec in records}
        if len(tags) > 1:
            raise StoreError(f"records carry differing source tags: {sorted(tags)}")
        extractor_tag = tags.pop() if tags else ""
    n = len(records)
    vectors = np.empty((n, dimension), dtype=np.float32)
    for i, rec in enumerate(records):
        vectors[i] = np.asarray(rec.vector, dtype=np.float32).reshape(-1)
    return write_store_arrays(
        path,
        [rec.id for rec in records],
        [rec.location.lat for rec in records],
        [rec.location.lon for rec in records],
        vectors,
        dimension=dimension,
        extractor_tag=extractor_tag,
    )


@dataclass
class StoreHandle:
    """Read-only view over a store file.

    ``vectors`` is an (N, d) float32 memory map; ``ids``, ``lats`` and ``lons``
    are views into the geotag table.
    """

    path: Path
    header: StoreHeader
    table: np.ndarray
    vectors: np.ndarray
    _mmap: mmap.mmap | None = field(default=None, repr=False)
    _ordinal: dict[int, int] | None = field(default=None, repr=False)
    _fingerprint: str | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.header.dimension

    @property
    def ids(self) -> np.ndarray:
        return self.table["id"]

    @property
    def lats(self) -> np.ndarray:
        return self.table["lat"]

    @property
    def lons(self) -> np.ndarray:
        return self.table["lon"]

    def __len__(self) -> int:
        return self.header.record_count

    def record(self, ordinal: int) -> DescriptorRecord:
        row = self.table[ordinal]
        return DescriptorRecord(
            id=int(row["id"]),
            vector=np.array(self.vectors[ordinal], dtype=np.float32),
            location=GeoPoint(float(row["lat"]), float(row["lon"])),
            source_tag=self.header.extractor_tag,
        )

    def __iter__(self) -> Iterator[DescriptorRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def ordinal_of(self, record_id: int) -> int:
        if self._ordinal is None:
            self._ordinal = {int(x): i for i, x in enumerate(self.ids)}
        try:
            return self._ordinal[int(record_id)]
        except KeyError:
            raise UnknownId(f"id {record_id} not in store {self.path}") from None

    def ordinals_of(self, record_ids: Iterable[int]) -> np.ndarray:
        return np.fromiter((self.ordinal_of(i) for i in record_ids), dtype=np.int64)

    def get(self, record_id: int) -> DescriptorRecord:
        return self.record(self.ordinal_of(record_id))

    def location_of(self, record_id: int) -> GeoPoint:
        i = self.ordinal_of(record_id)
        return GeoPoint(float(self.lats[i]), float(self.lons[i]))

    @property
    def fingerprint(self) -> str:
        """SHA-256 over the header and geotag table.

        The header alone cannot tell apart two stores with the same counts,
        so the id/coordinate table is hashed as well; the vector block is not.
        """
        if self._fingerprint is None:
            h = hashlib.sha256(self.header.pack())
            h.update(self.table.tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def checksums(self) -> dict[str, str]:
        return {
            "geotags_sha256": hashlib.sha256(self.table.tobytes()).hexdigest(),
            "vectors_sha256": hashlib.sha256(np.ascontiguousarray(self.vectors).tobytes()).hexdigest(),
        }

    def close(self) -> None:
        self.table = self.table[:0].copy()
        self.vectors = np.zeros((0, self.dimension), dtype=np.float32)
        if self._mmap is not None:
            try:
                self._mmap.close()
            except BufferError:
                # arrays created from the map are still referenced elsewhere
                pass
            self._mmap = None

    def __enter__(self) -> StoreHandle:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_header(raw: bytes, path: str | os.PathLike = "<bytes>") -> StoreHeader:
    if len(raw) < HEADER_SIZE:
        if raw[: len(MAGIC)] != MAGIC[: len(raw)]:
            raise BadMagic(f"{path}: not a descriptor store")
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs {HEADER_SIZE}")
    magic, version, dim, count, tag = HEADER_STRUCT.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if dim < 1:
        raise StoreError(f"{path}: dimension {dim} in header")
    return StoreHeader(
        dimension=dim,
        record_count=count,
        extractor_tag=tag.rstrip(b"\x00").decode("utf-8"),
        format_version=version,
        magic=magic,
    )


def open_store(path: str | os.PathLike) -> StoreHandle:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot open store {path}: {exc}") from exc
    with fh:
        head = fh.read(HEADER_SIZE)
        header = read_header(head, path)
        size = os.fstat(fh.fileno()).st_size
        if size != header.file_size:
            raise TruncatedFile(f"{path}: {size} bytes on disk, header implies {header.file_size}")
        n, d = header.record_count, header.dimension
        if n == 0:
            return StoreHandle(path, header, np.zeros(0, GEOTAG_DTYPE), np.zeros((0, d), np.float32))
        mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
    table = np.frombuffer(mm, dtype=GEOTAG_DTYPE, count=n, offset=HEADER_SIZE)
    vectors = np.frombuffer(mm, dtype="<f4", count=n * d, offset=HEADER_SIZE + n * GEOTAG_DTYPE.itemsize)
    return StoreHandle(path, header, table, vectors.reshape(n, d), _mmap=mm)


def read_ingest_manifest(
    manifest: str | os.PathLike, dimension: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Parse an ingestion manifest into column arrays.

    One record per line: ``id,lat,lon,vector_path[,byte_offset]``. The vector
    file holds raw little-endian float32 values. Without an offset the whole
    file is one vector; with an offset ``dimension`` floats are read from
    that byte position. Relative paths resolve against the manifest's folder.
    Blank lines, ``#`` comments and a leading ``id,...`` header are skipped.
    """
    manifest = Path(manifest)
    ids, lats, lons, vecs = [], [], [], []
    cache: dict[Path, np.ndarray] = {}
    with open(manifest, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "id":
                continue
            if len(row) not in (4, 5):
                raise StoreError(f"{manifest}:{lineno}: expected 4 or 5 fields, got {len(row)}")
            try:
                rid, lat, lon = int(row[0]), float(row[1]), float(row[2])
            except ValueError:
                raise StoreError(f"{manifest}:{lineno}: unparseable id or coordinates") from None
            vec_path = Path(row[3].strip())
            if not vec_path.is_absolute():
                vec_path = manifest.parent / vec_path
            if vec_path not in cache:
                try:
                    cache[vec_path] = np.fromfile(vec_path, dtype="<f4")
                except OSError as exc:
                    raise IoFailure(f"{manifest}:{lineno}: cannot read {vec_path}: {exc}") from exc
            raw = cache[vec_path]
            if len(row) == 5:
                if dimension is None:
                    raise DimensionMismatch(f"{manifest}:{lineno}: offsets require an explicit dimension")
                offset = int(row[4])
                if offset % 4:
                    raise StoreError(f"{manifest}:{lineno}: byte offset {offset} not float32 aligned")
                start = offset // 4
                vec = raw[start : start + dimension]
                if vec.shape[0] != dimension:
                    raise TruncatedFile(f"{manifest}:{lineno}: vector runs past end of {vec_path}")
            else:
                vec = raw
            if dimension is None:
                dimension = vec.shape[0]
            if vec.shape[0] != dimension:
                raise DimensionMismatch(
                    f"{manifest}:{lineno}: record {rid} has length {vec.shape[0]}, expected {dimension}"
                )
            ids.append(rid)
            lats.append(lat)
            lons.append(lon)
            vecs.append(vec)
    if dimension is None:
        raise DimensionMismatch(f"{manifest}: empty manifest needs an explicit dimension")
    vectors = np.vstack(vecs).astype(np.float32) if vecs else np.zeros((0, dimension), np.float32)
    return np.asarray(ids, np.uint64), np.asarray(lats), np.asarray(lons), vectors
