"""Frozen geodesy goldens shared by the unit and acceptance suites."""

import math

import numpy as np

from geoloc.geo import EARTH_RADIUS_KM

# Frozen from a 40-digit mpmath evaluation of R * atan2(|u x v|, u . v) on unit
# vectors, R = 6371.0 km. vector_oracle_km is the same formula in float64.
CITY_PAIRS = [
    ("Paris", (48.8566, 2.3522), "London", (51.5074, -0.1278), 343.556060341),
    ("New York", (40.7128, -74.006), "Los Angeles", (34.0522, -118.2437), 3935.74625461),
    ("Tokyo", (35.6762, 139.6503), "Sydney", (-33.8688, 151.2093), 7825.81861652),
    ("Sao Paulo", (-23.5505, -46.6333), "Cairo", (30.0444, 31.2357), 10219.6526158),
    ("Moscow", (55.7558, 37.6173), "Mumbai", (19.076, 72.8777), 5027.96156186),
    ("Beijing", (39.9042, 116.4074), "Cape Town", (-33.9249, 18.4241), 12955.8794698),
    ("Buenos Aires", (-34.6037, -58.3816), "Anchorage", (61.2181, -149.9003), 13404.1894636),
    ("Reykjavik", (64.1466, -21.9426), "Singapore", (1.3521, 103.8198), 11509.3256327),
    ("Auckland", (-36.8485, 174.7633), "Honolulu", (21.3069, -157.8583), 7075.73314573),
    ("Nairobi", (-1.2921, 36.8219), "Lima", (-12.0464, -77.0428), 12565.9339886),
    ("Suva", (-18.1416, 178.4419), "Apia", (-13.8333, -171.75), 1152.3243601),
    ("London", (51.5074, -0.1278), "New York", (40.7128, -74.006), 5570.22217974),
    ("Paris", (48.8566, 2.3522), "Tokyo", (35.6762, 139.6503), 9711.72481861),
    ("Sydney", (-33.8688, 151.2093), "Auckland", (-36.8485, 174.7633), 2155.89832598),
    ("Cairo", (30.0444, 31.2357), "Nairobi", (-1.2921, 36.8219), 3534.48674088),
    ("Mumbai", (19.076, 72.8777), "Singapore", (1.3521, 103.8198), 3903.77713228),
    ("Los Angeles", (34.0522, -118.2437), "Honolulu", (21.3069, -157.8583), 4119.92919632),
    ("Anchorage", (61.2181, -149.9003), "Tokyo", (35.6762, 139.6503), 5565.98709498),
    ("Lima", (-12.0464, -77.0428), "Buenos Aires", (-34.6037, -58.3816), 3137.40681121),
    ("Cape Town", (-33.9249, 18.4241), "Sao Paulo", (-23.5505, -46.6333), 6344.696214),
]

ANTIPODAL_KM = 20015.087


def vector_oracle_km(a, b):
    """Independent spherical distance: angle between unit vectors via atan2."""
    def unit(lat, lon):
        p, l = math.radians(lat), math.radians(lon)
        return np.array([math.cos(p) * math.cos(l), math.cos(p) * math.sin(l), math.sin(p)])

    u, v = unit(*a), unit(*b)
    return EARTH_RADIUS_KM * math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v))
