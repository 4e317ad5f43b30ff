"""Geographic primitives: units, great-circle distance, containment, spatial weights.

All polygon math is planar in lon/lat degrees, which is accurate enough at
city scale; distances between unit centroids use the haversine great-circle
formula on the IUGG mean Earth radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometry, TooFewUnits

EARTH_RADIUS_KM = 6371.0088  # IUGG mean radius

# Tolerance for on-boundary tests, in squared-degree units of the cross
# product; city-scale coordinates keep this safely below real offsets.
_EDGE_EPS = 1e-12


class Level(str, Enum):
    """Geographic granularity a unit belongs to."""

    POSTAL_CODE = "postal_code"
    TRACT = "tract"
    BLOCK_GROUP = "block_group"


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError("coordinates must be finite")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"lon {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"lat {self.lat} outside [-90, 90]")


Ring = tuple  # tuple[GeoPoint, ...], closed: first == last


def _ring_xy(ring: Sequence[GeoPoint]):
    return [(p.lon, p.lat) for p in ring]


def _signed_area_centroid(xy) -> tuple[float, float, float]:
    """Signed shoelace area and centroid of one closed ring."""
    a = 0.0
    cx = 0.0
    cy = 0.0
    for (x1, y1), (x2, y2) in zip(xy[:-1], xy[1:]):
        cross = x1 * y2 - x2 * y1
        a += cross
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    a *= 0.5
    if a == 0.0:
        return 0.0, 0.0, 0.0
    return a, cx / (6.0 * a), cy / (6.0 * a)


def _strictly_inside_ring(x: float, y: float, xy) -> bool:
    """Even-odd ray cast; boundary points are NOT handled here."""
    inside = False
    for (x1, y1), (x2, y2) in zip(xy[:-1], xy[1:]):
        if (y1 > y) != (y2 > y):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xint:
                inside = not inside
    return inside


def _on_ring_boundary(x: float, y: float, xy) -> bool:
    for (x1, y1), (x2, y2) in zip(xy[:-1], xy[1:]):
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) > _EDGE_EPS:
            continue
        dot = (x - x1) * (x2 - x1) + (y - y1) * (y2 - y1)
        seg = (x2 - x1) ** 2 + (y2 - y1) ** 2
        if -_EDGE_EPS <= dot <= seg + _EDGE_EPS:
            return True
    return False


@dataclass(frozen=True)
class GeoUnit:
    """One geographic polygon (possibly multi-part, possibly with holes).

    ``rings[0]`` is the exterior; additional rings are either holes or the
    exteriors of further parts (MultiPolygon input).  Ring roles are resolved
    by nesting depth, so both cases work with one representation.
    """

    unit_id: str
    level: Level
    rings: tuple
    centroid: GeoPoint = field(init=False)

    def __post_init__(self):
        if not self.rings:
            raise DegenerateGeometry(f"{self.unit_id}: no rings")
        for ring in self.rings:
            if len(ring) < 4:
                raise DegenerateGeometry(f"{self.unit_id}: ring with < 4 points")
            if ring[0] != ring[-1]:
                raise DegenerateGeometry(f"{self.unit_id}: ring not closed")
        object.__setattr__(self, "centroid", centroid(self))

    def contains(self, p: GeoPoint) -> bool:
        return point_in_unit(p, self)

    def bounds(self) -> tuple[float, float, float, float]:
        lons = [q.lon for ring in self.rings for q in ring]
        lats = [q.lat for ring in self.rings for q in ring]
        return min(lons), min(lats), max(lons), max(lats)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km; symmetric and nonnegative."""
    lam1, phi1 = math.radians(a.lon), math.radians(a.lat)
    lam2, phi2 = math.radians(b.lon), math.radians(b.lat)
    sdphi = math.sin((phi2 - phi1) / 2.0)
    sdlam = math.sin((lam2 - lam1) / 2.0)
    h = sdphi * sdphi + math.cos(phi1) * math.cos(phi2) * sdlam * sdlam
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def pairwise_km(points: Sequence[GeoPoint]) -> np.ndarray:
    """Dense symmetric matrix of haversine distances."""
    lon = np.radians([p.lon for p in points])
    lat = np.radians([p.lat for p in points])
    sdphi = np.sin((lat[:, None] - lat[None, :]) / 2.0)
    sdlam = np.sin((lon[:, None] - lon[None, :]) / 2.0)
    h = sdphi**2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * sdlam**2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def point_in_unit(p: GeoPoint, u: GeoUnit) -> bool:
    """Closed containment: boundary points (any ring) count as inside.

    Interior membership uses the even-odd rule over all rings, which yields
    "inside exterior minus holes" for single polygons and the union of parts
    for multi-part units.
    """
    x, y = p.lon, p.lat
    crossings = 0
    for ring in u.rings:
        xy = _ring_xy(ring)
        if _on_ring_boundary(x, y, xy):
            return True
        if _strictly_inside_ring(x, y, xy):
            crossings += 1
    return crossings % 2 == 1


def centroid(u: GeoUnit) -> GeoPoint:
    """Planar area-weighted centroid of the unit (holes subtracted).

    Each ring contributes sign(+1|-1) * |area| * ring_centroid, where the sign
    comes from nesting depth (rings inside an odd number of other rings are
    holes).
    """
    xys = [_ring_xy(r) for r in u.rings]
    areas = []
    cents = []
    for xy in xys:
        a, cx, cy = _signed_area_centroid(xy)
        areas.append(abs(a))
        cents.append((cx, cy))
    if areas[0] == 0.0:
        raise DegenerateGeometry(f"{u.unit_id}: exterior ring has zero area")

    wsum = 0.0
    cx_acc = 0.0
    cy_acc = 0.0
    for i, xy in enumerate(xys):
        if areas[i] == 0.0:
            continue
        # representative vertex of ring i, tested against every other ring
        rx, ry = xys[i][0]
        depth = sum(
            1
            for j, other in enumerate(xys)
            if j != i and _strictly_inside_ring(rx, ry, other)
        )
        sign = 1.0 if depth % 2 == 0 else -1.0
        w = sign * areas[i]
        wsum += w
        cx_acc += w * cents[i][0]
        cy_acc += w * cents[i][1]
    if wsum <= 0.0:
        raise DegenerateGeometry(f"{u.unit_id}: holes cover the exterior")
    return GeoPoint(cx_acc / wsum, cy_acc / wsum)


# --- spatial weights ---


@dataclass(frozen=True)
class KNearest:
    k: int


@dataclass(frozen=True)
class FixedBand:
    d_km: float


@dataclass(frozen=True)
class KernelScheme:
    kernel: str  # "gaussian" | "bisquare"
    bandwidth: float


@dataclass
class SpatialWeights:
    """Sparse unit-to-unit weights, keyed by (row, col) index pairs."""

    n: int
    scheme: object
    entries: dict
    row_standardized: bool = False
    includes_self: bool = False
    isolated: tuple = ()  # row indices with no neighbor besides self

    def __post_init__(self):
        for (i, j), w in self.entries.items():
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"index ({i},{j}) outside [0,{self.n})")
            if not (math.isfinite(w) and w >= 0.0):
                raise ValueError(f"weight w[{i},{j}]={w} must be finite and >= 0")

    def row(self, i: int) -> dict:
        return {j: w for (r, j), w in self.entries.items() if r == i}

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.n)
        for (i, _j), w in self.entries.items():
            sums[i] += w
        return sums

    def row_standardized_copy(self) -> "SpatialWeights":
        sums = self.row_sums()
        entries = {
            (i, j): (w / sums[i] if sums[i] > 0 else w)
            for (i, j), w in self.entries.items()
        }
        return SpatialWeights(
            n=self.n,
            scheme=self.scheme,
            entries=entries,
            row_standardized=True,
            includes_self=self.includes_self,
            isolated=self.isolated,
        )

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for (i, j), w in self.entries.items():
            m[i, j] = w
        return m


def build_weights(
    units: Sequence[GeoUnit],
    scheme,
    *,
    row_standardize: bool = False,
    include_self: bool = False,
) -> SpatialWeights:
    """Construct spatial weights over unit centroids.

    KNearest: binary weights to the k nearest centroids, distance ties broken
    by ascending unit_id.  FixedBand: binary weights within d_km.  Kernel:
    distance-decayed weights for every pair (zero-weight pairs dropped).
    The result is deterministic for identical input.
    """
    n = len(units)
    if n < 2:
        raise TooFewUnits("need at least 2 units")
    levels = {u.level for u in units}
    if len(levels) != 1:
        raise ValueError("all units must share one level")
    if isinstance(scheme, KNearest) and not (1 <= scheme.k < n):
        raise ValueError(f"KNearest k={scheme.k} must satisfy 1 <= k < n={n}")

    dist = pairwise_km([u.centroid for u in units])
    ids = [u.unit_id for u in units]
    entries: dict = {}
    isolated = []

    for i in range(n):
        if isinstance(scheme, KNearest):
            order = sorted(
                (j for j in range(n) if j != i),
                key=lambda j: (dist[i, j], ids[j]),
            )
            for j in order[: scheme.k]:
                entries[(i, j)] = 1.0
        elif isinstance(scheme, FixedBand):
            row_empty = True
            for j in range(n):
                if j != i and dist[i, j] <= scheme.d_km:
                    entries[(i, j)] = 1.0
                    row_empty = False
            if row_empty:
                isolated.append(i)
        elif isinstance(scheme, KernelScheme):
            from .regression import kernel_weight  # deferred: avoids import cycle

            for j in range(n):
                if j == i:
                    continue
                w = kernel_weight(dist[i, j], scheme.bandwidth, scheme.kernel)
                if w > 0.0:
                    entries[(i, j)] = w
        else:
            raise TypeError(f"unknown scheme {scheme!r}")
        if include_self:
            entries[(i, i)] = 1.0

    weights = SpatialWeights(
        n=n,
        scheme=scheme,
        entries=entries,
        includes_self=include_self,
        isolated=tuple(isolated),
    )
    if row_standardize:
        weights = weights.row_standardized_copy()
    return weights


def min_connecting_band_km(units: Sequence[GeoUnit]) -> float:
    """Smallest distance band giving every unit at least one neighbor."""
    if len(units) < 2:
        raise TooFewUnits("need at least 2 units")
    dist = pairwise_km([u.centroid for u in units])
    np.fill_diagonal(dist, np.inf)
    return float(dist.min(axis=1).max())


# --- GeoJSON interface ---

_LEVELS = {lv.value for lv in Level}


def _rings_from_polygon(coords) -> list:
    rings = []
    for ring in coords:
        rings.append(tuple(GeoPoint(float(x), float(y)) for x, y in ring))
    return rings


def load_geojson(text: str) -> list[GeoUnit]:
    """Parse a FeatureCollection of Polygon/MultiPolygon units.

    Each feature needs properties ``unit_id`` and ``level``; MultiPolygon
    parts are flattened into one GeoUnit's ring list.
    """
    doc = json.loads(text)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    units = []
    seen: dict = {}
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        unit_id = props.get("unit_id")
        level = props.get("level")
        if not isinstance(unit_id, str) or level not in _LEVELS:
            raise ValueError(f"feature missing unit_id/level: {props!r}")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            rings = _rings_from_polygon(geom["coordinates"])
        elif gtype == "MultiPolygon":
            rings = []
            for part in geom["coordinates"]:
                rings.extend(_rings_from_polygon(part))
        else:
            raise ValueError(f"{unit_id}: geometry must be Polygon or MultiPolygon")
        key = (level, unit_id)
        if key in seen:
            raise ValueError(f"duplicate unit_id {unit_id!r} at level {level}")
        seen[key] = True
        units.append(GeoUnit(unit_id=unit_id, level=Level(level), rings=tuple(rings)))
    return units


def units_to_geojson(units: Iterable[GeoUnit]) -> dict:
    feats = []
    for u in sorted(units, key=lambda x: x.unit_id):
        coords = [[[p.lon, p.lat] for p in ring] for ring in u.rings]
        feats.append(
            {
                "type": "Feature",
                "properties": {"unit_id": u.unit_id, "level": u.level.value},
                "geometry": {"type": "Polygon", "coordinates": coords},
            }
        )
    return {"type": "FeatureCollection", "features": feats}
