"""Urban layouts as immutable GeoJSON feature collections.

Coordinates are stored as plain ``(lon, lat)`` float tuples nested per
geometry kind:

* Point        -> ``(lon, lat)``
* LineString   -> ``((lon, lat), ...)``
* Polygon      -> ``(ring, ...)``, exterior ring first
* MultiPolygon -> ``(polygon, ...)``
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .errors import (
    CoordinateOutOfRange,
    FeatureNotFound,
    InvalidGeometry,
    MalformedDocument,
)

log = logging.getLogger(__name__)

CRS = "WGS84 (EPSG:4326)"
PRECISION = 7

GEOMETRY_KINDS = ("Point", "LineString", "Polygon", "MultiPolygon")
LEVEL_OF_KIND = {
    "Point": "point",
    "LineString": "line",
    "Polygon": "polygon",
    "MultiPolygon": "polygon",
}


@dataclass(frozen=True)
class GeoCoord:
    lon: float
    lat: float

    def __post_init__(self):
        _check_coord(self.lon, self.lat)

    def as_tuple(self) -> tuple[float, float]:
        return (self.lon, self.lat)


@dataclass(frozen=True)
class Geometry:
    kind: str
    coordinates: tuple

    def __post_init__(self):
        if self.kind not in GEOMETRY_KINDS:
            raise InvalidGeometry(f"unsupported geometry type {self.kind!r}")
        _check_structure(self.kind, self.coordinates)

    @property
    def level(self) -> str:
        return LEVEL_OF_KIND[self.kind]

    def polygons(self) -> tuple:
        """Polygon parts as a tuple of ring tuples (empty for non-areal kinds)."""
        if self.kind == "Polygon":
            return (self.coordinates,)
        if self.kind == "MultiPolygon":
            return self.coordinates
        return ()

    def iter_coords(self) -> Iterator[tuple[float, float]]:
        if self.kind == "Point":
            yield self.coordinates
        elif self.kind == "LineString":
            yield from self.coordinates
        else:
            for poly in self.polygons():
                for ring in poly:
                    yield from ring

    @property
    def is_empty(self) -> bool:
        return self.kind == "MultiPolygon" and len(self.coordinates) == 0

    @classmethod
    def point(cls, lon: float, lat: float) -> "Geometry":
        return cls("Point", (float(lon), float(lat)))

    @classmethod
    def line(cls, coords: Iterable) -> "Geometry":
        return cls("LineString", tuple((float(x), float(y)) for x, y in coords))

    @classmethod
    def polygon(cls, rings: Iterable) -> "Geometry":
        return cls("Polygon", tuple(tuple((float(x), float(y)) for x, y in r) for r in rings))

    @classmethod
    def empty(cls) -> "Geometry":
        return cls("MultiPolygon", ())


@dataclass(frozen=True)
class Feature:
    id: str
    geometry: Geometry
    properties: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise MalformedDocument("feature id must be non-empty")

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.id.encode())
        h.update(self.geometry.kind.encode())
        h.update(repr(self.geometry.coordinates).encode())
        h.update(json.dumps(dict(self.properties), sort_keys=True).encode())
        return h.hexdigest()

    def with_geometry(self, geometry: Geometry) -> "Feature":
        return Feature(self.id, geometry, self.properties)


@dataclass
class ParseReport:
    synthesized_ids: list = field(default_factory=list)
    renamed_duplicates: list = field(default_factory=list)
    flattened: list = field(default_factory=list)
    dropped_null: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.synthesized_ids or self.renamed_duplicates
                    or self.flattened or self.dropped_null)

    def to_text(self) -> str:
        return json.dumps({
            "synthesized_ids": self.synthesized_ids,
            "renamed_duplicates": self.renamed_duplicates,
            "flattened": self.flattened,
            "dropped_null": self.dropped_null,
        }, sort_keys=True)


@dataclass(frozen=True)
class UrbanLayout:
    features: tuple[Feature, ...] = ()
    crs: str = CRS
    report: ParseReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        seen = set()
        for f in self.features:
            if f.id in seen:
                raise MalformedDocument(f"duplicate feature id {f.id!r}")
            seen.add(f.id)

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self) -> Iterator[Feature]:
        return iter(self.features)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {f.id: i for i, f in enumerate(self.features)}

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.features]

    def __contains__(self, fid: str) -> bool:
        return fid in self._index

    def get(self, fid: str) -> Feature | None:
        i = self._index.get(fid)
        return None if i is None else self.features[i]

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        for f in self.features:
            h.update(f.digest.encode())
        return h.hexdigest()

    def replace(self, *features: Feature) -> "UrbanLayout":
        """New layout with the given features substituted by id (order kept)."""
        updates = {f.id: f for f in features}
        missing = set(updates) - set(self._index)
        if missing:
            raise FeatureNotFound(f"unknown feature ids {sorted(missing)}")
        return UrbanLayout(tuple(updates.get(f.id, f) for f in self.features))

    def without(self, ids: Iterable[str]) -> "UrbanLayout":
        drop = set(ids)
        return UrbanLayout(tuple(f for f in self.features if f.id not in drop))

    def bbox(self) -> tuple[float, float, float, float]:
        xs, ys = [], []
        for f in self.features:
            for x, y in f.geometry.iter_coords():
                xs.append(x)
                ys.append(y)
        if not xs:
            return (0.0, 0.0, 0.0, 0.0)
        return (min(xs), min(ys), max(xs), max(ys))

    def bbox_center(self) -> GeoCoord:
        x0, y0, x1, y1 = self.bbox()
        return GeoCoord((x0 + x1) / 2, (y0 + y1) / 2)


@dataclass(frozen=True)
class FeatureClass:
    semantic: str  # green | road | other
    level: str  # point | line | polygon


@dataclass(frozen=True)
class Taxonomy:
    """Tag rules deciding which features count as green space or roads."""

    green: Mapping[str, frozenset] = field(default_factory=lambda: {
        "landuse": frozenset({"grass", "forest", "meadow", "recreation_ground", "village_green"}),
        "leisure": frozenset({"park", "garden", "golf_course"}),
        "natural": frozenset({"wood", "grassland", "scrub"}),
    })
    road_key: str = "highway"
    protected: Mapping[str, frozenset | None] = field(default_factory=lambda: {
        "building": None,  # None: any value
    })

    def is_protected(self, props: Mapping[str, str]) -> bool:
        for key, values in self.protected.items():
            if key in props and (values is None or props[key] in values):
                return True
        return False


DEFAULT_TAXONOMY = Taxonomy()


@dataclass
class DiffReport:
    added: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    modified: list = field(default_factory=list)
    unchanged: list = field(default_factory=list)

    @property
    def changed(self) -> list:
        return self.added + self.removed + self.modified


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _check_coord(lon, lat):
    if not (isinstance(lon, (int, float)) and isinstance(lat, (int, float))):
        raise InvalidGeometry(f"coordinate components must be numbers: {lon!r}, {lat!r}")
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise InvalidGeometry(f"non-finite coordinate ({lon}, {lat})")
    if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
        raise CoordinateOutOfRange(f"coordinate ({lon}, {lat}) outside WGS84 range")


def _check_position(p):
    if not isinstance(p, tuple) or len(p) != 2:
        raise InvalidGeometry(f"position must be a (lon, lat) pair, got {p!r}")
    _check_coord(*p)


def _check_ring(ring):
    if len(ring) < 4:
        raise InvalidGeometry(f"polygon ring has {len(ring)} coordinates, need >= 4")
    for p in ring:
        _check_position(p)
    if ring[0] != ring[-1]:
        raise InvalidGeometry("polygon ring is not closed")


def _check_structure(kind, coords):
    if kind == "Point":
        _check_position(coords)
    elif kind == "LineString":
        if len(coords) < 2:
            raise InvalidGeometry(f"LineString has {len(coords)} coordinates, need >= 2")
        for p in coords:
            _check_position(p)
    elif kind == "Polygon":
        if len(coords) < 1:
            raise InvalidGeometry("Polygon without rings")
        for ring in coords:
            _check_ring(ring)
    else:
        for poly in coords:
            if len(poly) < 1:
                raise InvalidGeometry("MultiPolygon part without rings")
            for ring in poly:
                _check_ring(ring)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _reject_constant(name):
    raise MalformedDocument(f"non-finite number {name} in document")


def _to_tuples(obj, depth):
    try:
        if depth == 0:
            if len(obj) != 2:
                raise InvalidGeometry(
                    f"expected 2D position, got {len(obj)} components (3D is unsupported)")
            return (float(obj[0]), float(obj[1]))
        return tuple(_to_tuples(o, depth - 1) for o in obj)
    except TypeError as exc:
        raise InvalidGeometry(f"malformed coordinate array: {exc}") from None


_DEPTH = {"Point": 0, "LineString": 1, "Polygon": 2, "MultiPolygon": 3}


def geometry_from_json(obj) -> Geometry:
    if not isinstance(obj, dict) or "type" not in obj:
        raise MalformedDocument("geometry must be an object with a type")
    kind = obj["type"]
    if kind not in _DEPTH:
        raise InvalidGeometry(f"unsupported geometry type {kind!r}")
    if "coordinates" not in obj:
        raise MalformedDocument(f"{kind} without coordinates")
    for v in _flatten_numbers(obj["coordinates"]):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidGeometry(f"non-numeric coordinate value {v!r}")
    return Geometry(kind, _to_tuples(obj["coordinates"], _DEPTH[kind]))


def _flatten_numbers(obj):
    if isinstance(obj, list):
        for o in obj:
            yield from _flatten_numbers(o)
    else:
        yield obj


def _flatten_properties(fid, props, report):
    out = {}
    for key, value in (props or {}).items():
        if value is None:
            report.dropped_null.append(f"{fid}:{key}")
            continue
        if isinstance(value, str):
            out[str(key)] = value
        elif isinstance(value, (dict, list)):
            out[str(key)] = json.dumps(value, sort_keys=True, separators=(",", ":"))
            report.flattened.append(f"{fid}:{key}")
        else:
            out[str(key)] = json.dumps(value)
    return out


def parse_layout(text: str | bytes) -> UrbanLayout:
    """Parse a GeoJSON FeatureCollection into an :class:`UrbanLayout`.

    Feature ids come from the ``id`` member, then ``properties["@id"]``,
    then are synthesized as ``feat/<index>``. Repeated ids get a ``#k``
    suffix. Both cases, and any nested property values flattened to JSON
    text, are recorded on ``layout.report``.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not utf-8: {exc}") from None
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedDocument("document is not a GeoJSON FeatureCollection")
    raw_features = doc.get("features")
    if not isinstance(raw_features, list):
        raise MalformedDocument("FeatureCollection.features must be a list")

    report = ParseReport()
    features = []
    seen: dict[str, int] = {}
    for index, raw in enumerate(raw_features):
        if not isinstance(raw, dict) or raw.get("type") != "Feature":
            raise MalformedDocument(f"features[{index}] is not a Feature")
        props = raw.get("properties") or {}
        if not isinstance(props, dict):
            raise MalformedDocument(f"features[{index}].properties must be an object")
        fid = raw.get("id")
        if fid is None or fid == "":
            fid = props.get("@id")
        if fid is None or fid == "":
            fid = f"feat/{index}"
            report.synthesized_ids.append(fid)
        fid = str(fid)
        if fid in seen:
            seen[fid] += 1
            new_id = f"{fid}#{seen[fid]}"
            while new_id in seen:
                seen[fid] += 1
                new_id = f"{fid}#{seen[fid]}"
            report.renamed_duplicates.append([fid, new_id])
            fid = new_id
        seen.setdefault(fid, 0)
        if raw.get("geometry") is None:
            raise InvalidGeometry(f"feature {fid} has no geometry")
        geom = geometry_from_json(raw["geometry"])
        features.append(Feature(fid, geom, _flatten_properties(fid, props, report)))

    layout = UrbanLayout(tuple(features), report=report)
    if not report.empty:
        log.info("parse report: %s", report.to_text())
    return layout


def load_layout(path) -> UrbanLayout:
    with open(path, "rb") as fh:
        return parse_layout(fh.read())


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    s = f"{v:.{PRECISION}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def _coords_text(kind, coords) -> str:
    def pos(p):
        return f"[{_fmt(p[0])},{_fmt(p[1])}]"

    def seq(ps):
        return "[" + ",".join(pos(p) for p in ps) + "]"

    if kind == "Point":
        return pos(coords)
    if kind == "LineString":
        return seq(coords)
    if kind == "Polygon":
        return "[" + ",".join(seq(r) for r in coords) + "]"
    return "[" + ",".join("[" + ",".join(seq(r) for r in poly) + "]" for poly in coords) + "]"


def geometry_to_json(geom: Geometry) -> dict:
    def conv(c, depth):
        if depth == 0:
            return [c[0], c[1]]
        return [conv(x, depth - 1) for x in c]

    return {"type": geom.kind, "coordinates": conv(geom.coordinates, _DEPTH[geom.kind])}


def serialize_layout(layout: UrbanLayout) -> str:
    """GeoJSON text with one feature per line and 7-decimal coordinates."""
    lines = []
    for f in layout.features:
        geom = (f'{{"type":{json.dumps(f.geometry.kind)},'
                f'"coordinates":{_coords_text(f.geometry.kind, f.geometry.coordinates)}}}')
        props = json.dumps(dict(f.properties), ensure_ascii=False, separators=(",", ":"))
        lines.append(f'{{"type":"Feature","id":{json.dumps(f.id)},'
                     f'"geometry":{geom},"properties":{props}}}')
    if not lines:
        return '{"type":"FeatureCollection","features":[]}\n'
    return '{"type":"FeatureCollection","features":[\n' + ",\n".join(lines) + "\n]}\n"


def save_layout(layout: UrbanLayout, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_layout(layout))


def round_layout(layout: UrbanLayout) -> UrbanLayout:
    """The layout as it would read back after serialization."""
    return parse_layout(serialize_layout(layout))


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def classify_feature(f: Feature, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> FeatureClass:
    level = f.geometry.level
    props = f.properties
    for key, values in taxonomy.green.items():
        if props.get(key) in values:
            return FeatureClass("green", level)
    if f.geometry.kind == "LineString" and taxonomy.road_key in props:
        return FeatureClass("road", level)
    return FeatureClass("other", level)


def is_green_polygon(f: Feature, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> bool:
    return classify_feature(f, taxonomy) == FeatureClass("green", "polygon")


def find_feature(layout: UrbanLayout, fid: str) -> Feature:
    f = layout.get(fid)
    if f is None:
        raise FeatureNotFound(f"no feature with id {fid!r}")
    return f


def layout_diff(a: UrbanLayout, b: UrbanLayout) -> DiffReport:
    report = DiffReport()
    for f in a.features:
        other = b.get(f.id)
        if other is None:
            report.removed.append(f.id)
        elif other == f:
            report.unchanged.append(f.id)
        else:
            report.modified.append(f.id)
    for f in b.features:
        if f.id not in a:
            report.added.append(f.id)
    return report
