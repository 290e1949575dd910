"""Spherical geodesy on validated coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from geoloc.errors import OutOfRangeLatitude

# Mean spherical Earth radius; antipodal distance is pi * 6371.0 = 20015.087 km.
EARTH_RADIUS_KM = 6371.0
MAX_DISTANCE_KM = math.pi * EARTH_RADIUS_KM


def wrap_longitude(lon: float) -> float:
    """Wrap a longitude into [-180, 180). Values already in range are returned unchanged."""
    if -180.0 <= lon < 180.0:
        return lon
    if not math.isfinite(lon):
        raise ValueError(f"longitude is not finite: {lon!r}")
    wrapped = math.fmod(lon + 180.0, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    wrapped -= 180.0
    # fmod/add rounding can land exactly on the open end
    if wrapped >= 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """Latitude/longitude in degrees. Longitude is wrapped into [-180, 180) on construction."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat = float(self.lat)
        if not (-90.0 <= lat <= 90.0):
            raise OutOfRangeLatitude(f"latitude {self.lat!r} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", wrap_longitude(float(self.lon)))

    def as_tuple(self) -> tuple[float, float]:
        return (self.lat, self.lon)


def normalize(lat_raw: float, lon_raw: float) -> GeoPoint:
    """Validate a raw coordinate pair; raises OutOfRangeLatitude when |lat| > 90."""
    return GeoPoint(lat_raw, lon_raw)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def haversine_km_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Vectorised haversine from one point to arrays of points (degrees in, km out)."""
    phi1 = np.radians(lat)
    phi2 = np.radians(np.asarray(lats, dtype=np.float64))
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lons, dtype=np.float64) - lon)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def destination(origin: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached by travelling ``distance_km`` along a great circle at an initial bearing."""
    delta = distance_km / EARTH_RADIUS_KM
    theta = math.radians(bearing_deg)
    phi1 = math.radians(origin.lat)
    lam1 = math.radians(origin.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(min(1.0, max(-1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    return GeoPoint(min(90.0, max(-90.0, math.degrees(phi2))), math.degrees(lam2))


def to_unit_vectors(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Cartesian unit vectors for degree coordinates, shape (n, 3).

    Chord length between unit vectors is monotone in great-circle distance,
    so a Euclidean nearest-neighbour structure over these answers haversine
    nearest-neighbour queries.
    """
    phi = np.radians(np.asarray(lats, dtype=np.float64))
    lam = np.radians(np.asarray(lons, dtype=np.float64))
    cos_phi = np.cos(phi)
    return np.column_stack((cos_phi * np.cos(lam), cos_phi * np.sin(lam), np.sin(phi)))
