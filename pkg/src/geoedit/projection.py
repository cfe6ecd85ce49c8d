"""Local planar frame: equirectangular tangent plane around a center point.

    x = R * cos(lat_c) * (lon - lon_c)      (radians)
    y = R * (lat - lat_c)

The mapping is linear, so ``unproject`` is its exact algebraic inverse.
Patch-scale error against great-circle distance stays below 0.1 %.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGeometry, PoleSingularity
from .model import GeoCoord, Geometry

EARTH_RADIUS_M = 6371008.8
MAX_FRAME_LAT = 89.0


@dataclass(frozen=True)
class PlanarFrame:
    center: GeoCoord
    earth_radius: float = EARTH_RADIUS_M

    @property
    def kx(self) -> float:
        """Meters per degree of longitude at the center latitude."""
        return self.earth_radius * math.cos(math.radians(self.center.lat)) * math.pi / 180.0

    @property
    def ky(self) -> float:
        return self.earth_radius * math.pi / 180.0

    def _check_invertible(self):
        if abs(self.center.lat) > MAX_FRAME_LAT:
            raise PoleSingularity(
                f"frame center latitude {self.center.lat} too close to the pole")

    def to_xy(self, lon: float, lat: float) -> tuple[float, float]:
        return ((lon - self.center.lon) * self.kx, (lat - self.center.lat) * self.ky)

    def to_lonlat(self, x: float, y: float) -> tuple[float, float]:
        self._check_invertible()
        return (self.center.lon + x / self.kx, self.center.lat + y / self.ky)

    def project_array(self, lonlat) -> np.ndarray:
        a = np.asarray(lonlat, dtype=float).reshape(-1, 2)
        return np.column_stack(((a[:, 0] - self.center.lon) * self.kx,
                                (a[:, 1] - self.center.lat) * self.ky))

    def unproject_array(self, xy) -> np.ndarray:
        self._check_invertible()
        a = np.asarray(xy, dtype=float).reshape(-1, 2)
        return np.column_stack((self.center.lon + a[:, 0] / self.kx,
                                self.center.lat + a[:, 1] / self.ky))


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite planar point ({self.x}, {self.y})")


def make_frame(center: GeoCoord) -> PlanarFrame:
    return PlanarFrame(center)


def project(frame: PlanarFrame, p: GeoCoord) -> PlanarPoint:
    return PlanarPoint(*frame.to_xy(p.lon, p.lat))


def unproject(frame: PlanarFrame, q: PlanarPoint) -> GeoCoord:
    return GeoCoord(*frame.to_lonlat(q.x, q.y))


def planar_distance(a: PlanarPoint, b: PlanarPoint) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def ring_signed_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def geometry_area(frame: PlanarFrame, poly: Geometry) -> float:
    """Planar area in m^2: exterior rings minus holes, summed over parts."""
    if poly.kind not in ("Polygon", "MultiPolygon"):
        raise InvalidGeometry(f"area undefined for {poly.kind}")
    total = 0.0
    for part in poly.polygons():
        outer = abs(ring_signed_area(frame.project_array(part[0])))
        holes = sum(abs(ring_signed_area(frame.project_array(r))) for r in part[1:])
        total += outer - holes
    return max(total, 0.0)
