"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without a
lookup table: 2 for bad data, 3 for an exhausted remote prior provider.
"""

from __future__ import annotations


class GeolocError(Exception):
    exit_code = 2


class OutOfRangeLatitude(GeolocError, ValueError):
    pass


class StoreError(GeolocError):
    pass


class DimensionMismatch(StoreError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class DuplicateId(StoreError, ValueError):
    pass


class NonFiniteVector(StoreError, ValueError):
    pass


class IoFailure(StoreError, OSError):
    pass


class BadMagic(StoreError):
    pass


class UnsupportedVersion(StoreError):
    pass


class TruncatedFile(StoreError):
    pass


class UnknownId(StoreError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class EmptyStore(GeolocError, ValueError):
    pass


class KTooLarge(GeolocError, ValueError):
    pass


class FingerprintMismatch(GeolocError):
    pass


class InconsistentEngine(GeolocError):
    pass


class ConfigError(GeolocError, ValueError):
    exit_code = 1


class MissingGroundTruth(GeolocError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class SpecInvalid(GeolocError, ValueError):
    pass


class RemoteProviderExhausted(GeolocError):
    exit_code = 3
