"""Coordinate types, UTM-K <-> WGS84 conversion, great-circle distance,
and a uniform grid index for radius queries.

The planar system is the Korean national grid (EPSG:5179, GRS80 ellipsoid,
Transverse Mercator with lat0=38, lon0=127.5, k0=0.9996, false easting
1,000,000 m, false northing 2,000,000 m). GRS80 and WGS84 are treated as
identical here; no datum shift is applied.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0

# GRS80 ellipsoid + EPSG:5179 projection constants
_A = 6_378_137.0
_F = 1.0 / 298.257222101
_E2 = 2.0 * _F - _F * _F
_EP2 = _E2 / (1.0 - _E2)
_K0 = 0.9996
_LAT0 = math.radians(38.0)
_LON0 = math.radians(127.5)
_FALSE_E = 1_000_000.0
_FALSE_N = 2_000_000.0

# plausible Korea extent for UTM-K coordinates (warning only)
_UTMK_X_RANGE = (7e5, 1.4e6)
_UTMK_Y_RANGE = (1.4e6, 2.3e6)

# metres per degree of latitude on the haversine sphere
_M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


class InvalidCoordinateError(ValueError):
    """A coordinate is non-finite or outside its valid range."""


@dataclass(frozen=True)
class Wgs84Point:
    """Geographic point in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidCoordinateError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidCoordinateError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidCoordinateError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class UtmkPoint:
    """Planar point in EPSG:5179 metres (x = easting, y = northing)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidCoordinateError(f"non-finite coordinate ({self.x}, {self.y})")
        if not (_UTMK_X_RANGE[0] <= self.x <= _UTMK_X_RANGE[1]
                and _UTMK_Y_RANGE[0] <= self.y <= _UTMK_Y_RANGE[1]):
            warnings.warn(
                f"UTM-K point ({self.x}, {self.y}) outside the plausible Korea extent",
                stacklevel=3,
            )


def _meridian_arc(lat: float) -> float:
    """Meridional arc length from the equator (Redfearn series), metres."""
    e2, e4, e6 = _E2, _E2 ** 2, _E2 ** 3
    a0 = 1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256
    a2 = (3.0 / 8.0) * (e2 + e4 / 4 + 15 * e6 / 128)
    a4 = (15.0 / 256.0) * (e4 + 3 * e6 / 4)
    a6 = 35 * e6 / 3072
    return _A * (a0 * lat - a2 * math.sin(2 * lat) + a4 * math.sin(4 * lat)
                 - a6 * math.sin(6 * lat))


_M0 = _meridian_arc(_LAT0)


def wgs84_to_utmk(p: Wgs84Point) -> UtmkPoint:
    """Forward Transverse Mercator projection onto the EPSG:5179 plane."""
    lat = math.radians(p.lat)
    dlon = math.radians(p.lon) - _LON0
    s, c, t = math.sin(lat), math.cos(lat), math.tan(lat)
    cc = _EP2 * c * c
    aa = dlon * c
    n = _A / math.sqrt(1 - _E2 * s * s)
    m = _meridian_arc(lat)
    x = _FALSE_E + _K0 * n * (
        aa
        + (1 - t * t + cc) * aa ** 3 / 6
        + (5 - 18 * t * t + t ** 4 + 72 * cc - 58 * _EP2) * aa ** 5 / 120
    )
    y = _FALSE_N + _K0 * (
        m - _M0
        + n * t * (
            aa * aa / 2
            + (5 - t * t + 9 * cc + 4 * cc * cc) * aa ** 4 / 24
            + (61 - 58 * t * t + t ** 4 + 600 * cc - 330 * _EP2) * aa ** 6 / 720
        )
    )
    return UtmkPoint(x, y)


def utmk_to_wgs84(p: UtmkPoint) -> Wgs84Point:
    """Inverse Transverse Mercator from EPSG:5179 metres to degrees.

    Foot-point-latitude series; round-trips with :func:`wgs84_to_utmk`
    to well under 1e-6 degrees over the Korea extent.
    """
    m = _M0 + (p.y - _FALSE_N) / _K0
    mu = m / (_A * (1 - _E2 / 4 - 3 * _E2 ** 2 / 64 - 5 * _E2 ** 3 / 256))
    e1 = (1 - math.sqrt(1 - _E2)) / (1 + math.sqrt(1 - _E2))
    foot = (
        mu
        + (3 * e1 / 2 - 27 * e1 ** 3 / 32) * math.sin(2 * mu)
        + (21 * e1 ** 2 / 16 - 55 * e1 ** 4 / 32) * math.sin(4 * mu)
        + (151 * e1 ** 3 / 96) * math.sin(6 * mu)
        + (1097 * e1 ** 4 / 512) * math.sin(8 * mu)
    )
    s, c, t = math.sin(foot), math.cos(foot), math.tan(foot)
    c1 = _EP2 * c * c
    t1 = t * t
    n1 = _A / math.sqrt(1 - _E2 * s * s)
    r1 = _A * (1 - _E2) / (1 - _E2 * s * s) ** 1.5
    d = (p.x - _FALSE_E) / (n1 * _K0)
    lat = foot - (n1 * t / r1) * (
        d * d / 2
        - (5 + 3 * t1 + 10 * c1 - 4 * c1 * c1 - 9 * _EP2) * d ** 4 / 24
        + (61 + 90 * t1 + 298 * c1 + 45 * t1 * t1 - 252 * _EP2 - 3 * c1 * c1)
        * d ** 6 / 720
    )
    lon = _LON0 + (
        d
        - (1 + 2 * t1 + c1) * d ** 3 / 6
        + (5 - 2 * c1 + 28 * t1 - 3 * c1 * c1 + 8 * _EP2 + 24 * t1 * t1) * d ** 5 / 120
    ) / c
    return Wgs84Point(math.degrees(lat), math.degrees(lon))


def haversine_m(a: Wgs84Point, b: Wgs84Point) -> float:
    """Great-circle distance in metres (spherical Earth, R = 6,371,000 m)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


class GridIndex:
    """Uniform lat/lon bucket grid for radius-query prefiltering.

    Returns a superset of the points within the query radius; callers
    refine with :func:`haversine_m`. Intended for regional (city-scale)
    point sets; bucket geometry is fixed from the mean latitude.
    """

    def __init__(self, points: dict[str, Wgs84Point], cell_size_m: float = 1000.0):
        if cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")
        self.cell_size_m = cell_size_m
        self._points = dict(points)
        self._buckets: dict[tuple[int, int], list[str]] = {}
        if points:
            ref_lat = sum(p.lat for p in points.values()) / len(points)
        else:
            ref_lat = 0.0
        self._dlat = cell_size_m / _M_PER_DEG
        coslat = max(math.cos(math.radians(ref_lat)), 1e-9)
        self._dlon = cell_size_m / (_M_PER_DEG * coslat)
        for pid, p in points.items():
            self._buckets.setdefault(self._key(p), []).append(pid)

    def _key(self, p: Wgs84Point) -> tuple[int, int]:
        return (math.floor(p.lat / self._dlat), math.floor(p.lon / self._dlon))

    def __len__(self) -> int:
        return len(self._points)

    def query(self, center: Wgs84Point, radius_m: float) -> list[str]:
        """All indexed point ids possibly within radius_m of center (superset)."""
        if radius_m <= 0:
            raise ValueError("radius_m must be positive")
        if not self._points:
            return []
        # one guard ring beyond the covering bucket count absorbs the
        # flat-grid approximation error at city scale
        rings = math.ceil(radius_m / self.cell_size_m) + 1
        row0, col0 = self._key(center)
        out: list[str] = []
        for row in range(row0 - rings, row0 + rings + 1):
            for col in range(col0 - rings, col0 + rings + 1):
                out.extend(self._buckets.get((row, col), ()))
        return out


def grid_query(index: GridIndex, center: Wgs84Point, radius_m: float) -> list[str]:
    """Functional wrapper over :meth:`GridIndex.query`."""
    return index.query(center, radius_m)
