"""Geo-constrained descriptor retrieval with coordinate priors and haversine re-ranking."""

from geoloc.geo import EARTH_RADIUS_KM, GeoPoint, haversine_km, normalize

__version__ = "0.1.0"

__all__ = ["EARTH_RADIUS_KM", "GeoPoint", "haversine_km", "normalize", "__version__"]
