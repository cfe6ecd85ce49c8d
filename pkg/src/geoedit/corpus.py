"""Build an editing corpus: fetch and filter map patches, then generate labeled tasks.

Labels come from closed-form spherical formulas (destination point,
great-circle interpolation, spherical polygon area) and never from the
editing engine, so evaluation compares the engine against an outside
reference.
"""
from __future__ import annotations

import json
import math
import os
import re
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import (
    InsufficientFeatures,
    MalformedResponse,
    NetworkError,
    PoleProximity,
    RateLimited,
    Rejected,
)
from .model import (
    CRS,
    DEFAULT_TAXONOMY,
    Feature,
    GeoCoord,
    Geometry,
    Taxonomy,
    UrbanLayout,
    is_green_polygon,
)
from .planning import grammar_tables

EARTH_RADIUS_M = 6371008.8
DEFAULT_OVERPASS_URL = "https://overpass-api.de/api/interpreter"
DEFAULT_DENYLIST = ("created_by", "source", "note", "fixme", "attribution")
AREA_KEYS = ("building", "landuse", "leisure", "natural", "amenity", "area", "parking")
LINEAR_NATURAL = {"tree_row", "coastline", "cliff", "ridge"}


# ---------------------------------------------------------------------------
# spherical oracles
# ---------------------------------------------------------------------------

def haversine_m(a: tuple, b: tuple, radius: float = EARTH_RADIUS_M) -> float:
    lon1, lat1, lon2, lat2 = map(math.radians, (*a, *b))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * math.asin(min(1.0, math.sqrt(h)))


def destination(origin: tuple, bearing_deg: float, dist_m: float,
                radius: float = EARTH_RADIUS_M) -> tuple[float, float]:
    """Great-circle destination from ``origin`` (lon, lat) along an initial bearing."""
    lon1, lat1 = map(math.radians, origin)
    theta, delta = math.radians(bearing_deg), dist_m / radius
    lat2 = math.asin(math.sin(lat1) * math.cos(delta)
                     + math.cos(lat1) * math.sin(delta) * math.cos(theta))
    lon2 = lon1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(lat1),
                             math.cos(delta) - math.sin(lat1) * math.sin(lat2))
    return math.degrees(lon2), math.degrees(lat2)


def initial_bearing(a: tuple, b: tuple) -> float:
    lon1, lat1, lon2, lat2 = map(math.radians, (*a, *b))
    y = math.sin(lon2 - lon1) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(lon2 - lon1)
    return math.degrees(math.atan2(y, x)) % 360.0


def _slerp(a: tuple, b: tuple, t: float) -> tuple[float, float]:
    def vec(p):
        lon, lat = map(math.radians, p)
        return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])

    va, vb = vec(a), vec(b)
    omega = math.acos(float(np.clip(va @ vb, -1.0, 1.0)))
    if omega < 1e-15:
        return a
    v = (math.sin((1 - t) * omega) * va + math.sin(t * omega) * vb) / math.sin(omega)
    return math.degrees(math.atan2(v[1], v[0])), math.degrees(math.asin(np.clip(v[2], -1, 1)))


def arc_length_m(coords) -> float:
    return sum(haversine_m(p, q) for p, q in zip(coords[:-1], coords[1:]))


def point_along(coords, s: float, samples_per_segment: int = 64) -> tuple[float, float]:
    """Point at arc length ``s`` from the first vertex, by dense great-circle sampling."""
    walked = 0.0
    for p, q in zip(coords[:-1], coords[1:]):
        prev = p
        for i in range(1, samples_per_segment + 1):
            cur = _slerp(p, q, i / samples_per_segment)
            step = haversine_m(prev, cur)
            if walked + step >= s and step > 0:
                return _slerp(prev, cur, (s - walked) / step)
            walked += step
            prev = cur
    return tuple(coords[-1])


def spherical_ring_area(ring, radius: float = EARTH_RADIUS_M) -> float:
    """Unsigned area of a closed lon/lat ring on the sphere (line-integral form)."""
    total = 0.0
    for (lon1, lat1), (lon2, lat2) in zip(ring[:-1], ring[1:]):
        total += math.radians(lon2 - lon1) * (2 + math.sin(math.radians(lat1))
                                              + math.sin(math.radians(lat2)))
    return abs(total * radius * radius / 2.0)


def spherical_area(geom: Geometry) -> float:
    return sum(spherical_ring_area(part[0]) - sum(spherical_ring_area(h) for h in part[1:])
               for part in geom.polygons())


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchSpec:
    center: GeoCoord
    size_m: float = 1000.0

    def __post_init__(self):
        if not self.size_m > 0:
            raise ValueError("patch size must be positive")


def patch_bbox(spec: PatchSpec) -> tuple[GeoCoord, GeoCoord]:
    lat = spec.center.lat
    if abs(lat) >= 85.0:
        raise PoleProximity(f"patch center latitude {lat} is within 5 degrees of a pole")
    dlat = spec.size_m / (EARTH_RADIUS_M * math.pi / 180.0)
    dlon = dlat / math.cos(math.radians(lat))
    c = spec.center
    return (GeoCoord(c.lon - dlon / 2, lat - dlat / 2), GeoCoord(c.lon + dlon / 2, lat + dlat / 2))


def overpass_query(spec: PatchSpec) -> str:
    lo, hi = patch_bbox(spec)
    box = f"{lo.lat:.7f},{lo.lon:.7f},{hi.lat:.7f},{hi.lon:.7f}"
    return (f"[out:json][timeout:60];\n"
            f"(node({box})[~\".\"~\".\"];way({box}););\n"
            f"out geom;")


class _RateGate:
    def __init__(self, per_second: float):
        self.interval = 1.0 / per_second
        self.lock = threading.Lock()
        self.last = -math.inf

    def wait(self):
        with self.lock:
            now = time.monotonic()
            pause = self.last + self.interval - now
            if pause > 0:
                time.sleep(pause)
            self.last = time.monotonic()


_GATE = _RateGate(1.0)


def fetch_patch(spec: PatchSpec | None = None, source: str = "overpass", *,
                fixture: str | Path | None = None, url: str | None = None,
                http=None, retries: int = 3, backoff_s: float = 1.0,
                cache_dir: str | Path | None = None, sleep=time.sleep) -> str:
    """Raw Overpass JSON text for a patch, from the network or a stored fixture."""
    if source == "fixture":
        if fixture is None:
            raise ValueError("fixture mode needs a fixture path")
        return Path(fixture).read_bytes().decode("utf-8")
    if source != "overpass":
        raise ValueError(f"unknown patch source {source!r}")
    if spec is None:
        raise ValueError("overpass mode needs a PatchSpec")
    url = url or os.environ.get("GEOEDIT_OVERPASS_URL", DEFAULT_OVERPASS_URL)
    query = overpass_query(spec)
    cache = None
    if cache_dir is not None:
        key = f"{spec.center.lon:.6f}_{spec.center.lat:.6f}_{spec.size_m:g}.json"
        cache = Path(cache_dir) / key
        if cache.exists():
            return cache.read_text("utf-8")
    http = http or requests
    delay = backoff_s
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        if attempt:
            sleep(delay)
            delay *= 2
        _GATE.wait()
        try:
            resp = http.post(url, data={"data": query}, timeout=90)
        except requests.RequestException as exc:
            last_error = NetworkError(f"{type(exc).__name__}: {exc}")
            continue
        if resp.status_code in (429, 503, 504):
            retry_after = resp.headers.get("Retry-After")
            last_error = RateLimited(f"HTTP {resp.status_code} from {url}",
                                     retry_after=float(retry_after) if retry_after else None)
            if retry_after:
                delay = max(delay, float(retry_after))
            continue
        if resp.status_code != 200:
            last_error = NetworkError(f"HTTP {resp.status_code} from {url}")
            continue
        text = resp.text
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise MalformedResponse(f"response is not JSON: {exc}") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
            raise MalformedResponse("response has no elements array")
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            cache.write_text(text, "utf-8")
        return text
    raise last_error


@dataclass(frozen=True)
class FilterConfig:
    tag_denylist: tuple = DEFAULT_DENYLIST
    min_feature_count: int = 20
    drop_overlapping: bool = True

    def __post_init__(self):
        if self.min_feature_count < 0:
            raise ValueError("min_feature_count must be non-negative")


def _is_area(tags: dict, closed: bool) -> bool:
    if not closed:
        return False
    if tags.get("area") == "no":
        return False
    if "highway" in tags or "barrier" in tags:
        return tags.get("area") == "yes"
    if tags.get("natural") in LINEAR_NATURAL:
        return False
    return any(k in tags for k in AREA_KEYS)


def _element_geometry(el: dict) -> Geometry | None:
    if el.get("type") == "node":
        if "lat" not in el or "lon" not in el:
            return None
        return Geometry.point(float(el["lon"]), float(el["lat"]))
    if el.get("type") == "way":
        pts = el.get("geometry")
        if not pts:
            return None
        coords = [(float(p["lon"]), float(p["lat"])) for p in pts if p]
        if len(coords) < 2:
            return None
        if _is_area(el.get("tags", {}), coords[0] == coords[-1] and len(coords) >= 4):
            return Geometry.polygon([coords])
        return Geometry.line(coords)
    return None


def filter_patch(raw: str | dict, cfg: FilterConfig = FilterConfig()) -> UrbanLayout:
    """Overpass JSON to a layout: tagged elements with geometry, cleaned and deduplicated."""
    doc = json.loads(raw) if isinstance(raw, (str, bytes)) else raw
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
        raise MalformedResponse("document has no elements array")
    deny = set(cfg.tag_denylist)
    features, seen = [], set()
    for el in doc["elements"]:
        tags = {k: str(v) for k, v in (el.get("tags") or {}).items() if k not in deny}
        if not tags:
            continue
        geom = _element_geometry(el)
        if geom is None:
            continue
        if cfg.drop_overlapping:
            key = (geom.kind, geom.coordinates)
            if key in seen:
                continue
            seen.add(key)
        features.append(Feature(f"{el['type']}/{el['id']}", geom, tags))
    if not features:
        raise Rejected("empty")
    if len(features) < cfg.min_feature_count:
        raise Rejected("low_density")
    return UrbanLayout(tuple(features), CRS)


# ---------------------------------------------------------------------------
# labeled tasks
# ---------------------------------------------------------------------------

DIRECTION_NAMES = {0: "North", 45: "North-East", 90: "East", 135: "South-East",
                   180: "South", 225: "South-West", 270: "West", 315: "North-West"}

POINT_TEMPLATES = (
    "Find the {noun} (ID: {id}) and shift it approximately {m} meters to the {dir}, "
    "ensuring it remains aligned with its surroundings to correct its position.",
    "Move the {noun} with ID: {id} about {m} meters {dir} to match the surveyed location.",
    "Relocate the {noun} (ID: {id}) roughly {m} meters towards the {dir}.",
)
LINE_TEMPLATES = (
    "Locate the {noun} (ID: {id}) and {verb} its {end_phrase} by about {m} meters "
    "to correct geometry or connectivity issues.",
    "{Verb} the {noun} with ID: {id} at its {end_phrase} by approximately {m} meters.",
    "Take the {noun} (ID: {id}) and {verb} it by roughly {m} meters at the {end_phrase}.",
)
END_PHRASES = {"head": ("starting point (Head)", "head", "head end"),
               "tail": ("ending point (Tail)", "tail", "tail end")}
POLYGON_TEMPLATES = {
    "preserve": (
        "Gradually grow the existing green polygons until the total green coverage increases "
        "by approximately {pct}% relative to the current green area.\n"
        "All modifications must be applied only to polygons that are already green. "
        "Non-green areas must remain exactly unchanged, and no polygons may be deleted, "
        "merged, absorbed, or fused.\n"
        "Where feasible, aim to maintain a spacing of approximately 8 meters between "
        "distinct green areas.",
        "Without altering or encroaching on any non-green areas, extend the existing green "
        "polygons to reach an overall green-area increase of approximately {pct}%. "
        "Do not merge green polygons together, and do not delete or remove any features. "
        "If feasible, maintain around 8 meters of spacing between separate green regions.",
    ),
    "absorb": (
        "Gradually grow the existing green polygons by increasing the existing green area "
        "by approximately {pct}%.\n"
        "Merge adjacent or nearby green areas into larger regions, allowing the expansion "
        "to absorb less important parcels when necessary.\n"
        "Remove polygons that become fully covered by the expanded green areas.\n"
        "Keep a buffer of ~2 m from roads and a separation of ~8 m between green zones.",
    ),
}


@dataclass(frozen=True)
class LabeledTask:
    task_id: str
    level: str
    instruction: str
    layout_ref: str
    label: dict
    template: int = 0

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledTask":
        return cls(**{k: rec[k] for k in ("task_id", "level", "instruction", "layout_ref",
                                          "label", "template") if k in rec})


def _noun(f: Feature) -> str:
    p = f.properties
    for key in ("amenity", "highway", "natural", "leisure", "shop", "tourism", "emergency"):
        if key in p:
            return p[key].replace("_", " ")
    return "feature"


LINE_NOUNS = {"cycleway": "cycling path", "footway": "footpath", "path": "path",
              "residential": "street", "service": "service road", "primary": "road",
              "secondary": "road", "tertiary": "road"}


def eligible(layout: UrbanLayout, level: str, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> list:
    if level == "point":
        return [f for f in layout if f.geometry.kind == "Point"]
    if level == "line":
        return [f for f in layout if f.geometry.kind == "LineString"
                and arc_length_m(f.geometry.coordinates) >= 30.0]
    if level == "polygon":
        return [f for f in layout if is_green_polygon(f, taxonomy)]
    raise ValueError(f"unknown level {level!r}")


def gen_tasks(layout: UrbanLayout, level: str, count: int, seed: int,
              layout_ref: str = "", prefix: str = "") -> list[LabeledTask]:
    pool = eligible(layout, level)
    if not pool:
        raise InsufficientFeatures(f"layout has no features eligible for {level} tasks")
    rng = np.random.default_rng(seed)
    tasks = []
    for n in range(count):
        tid = f"{prefix}{level}-{seed}-{n:04d}"
        if level == "point":
            f = pool[int(rng.integers(len(pool)))]
            m = int(rng.integers(5, 51))
            bearing = sorted(DIRECTION_NAMES)[int(rng.integers(8))]
            t = int(rng.integers(len(POINT_TEMPLATES)))
            text = POINT_TEMPLATES[t].format(noun=_noun(f), id=f.id, m=m,
                                             dir=DIRECTION_NAMES[bearing])
            origin = f.geometry.coordinates
            label = {"id": f.id, "bearing": bearing, "magnitude_m": m,
                     "g_label": list(destination(origin, bearing, m))}
        elif level == "line":
            f = pool[int(rng.integers(len(pool)))]
            coords = list(f.geometry.coordinates)
            length = arc_length_m(coords)
            end = ("head", "tail")[int(rng.integers(2))]
            shorten = bool(rng.integers(2))
            m = int(rng.integers(5, 31))
            if shorten:
                m = min(m, int(math.floor(0.4 * length)))
            t = int(rng.integers(len(LINE_TEMPLATES)))
            verb = "shorten" if shorten else "extend"
            text = LINE_TEMPLATES[t].format(
                noun=LINE_NOUNS.get(f.properties.get("highway"), "line"), id=f.id,
                verb=verb, Verb=verb.capitalize(), end_phrase=END_PHRASES[end][t], m=m)
            label = {"id": f.id, "end": end, "delta_m": -m if shorten else m,
                     "magnitude_m": m, "length_m": length,
                     "g_label": list(_line_label(coords, end, -m if shorten else m))}
        else:
            ratio_pct = int(rng.integers(10, 51))
            mode = ("preserve", "absorb")[int(rng.integers(2))]
            options = POLYGON_TEMPLATES[mode]
            t = int(rng.integers(len(options)))
            text = options[t].format(pct=ratio_pct)
            area = sum(spherical_area(f.geometry) for f in pool)
            label = {"target_ratio": ratio_pct / 100.0, "mode": mode,
                     "initial_green_area_m2": area,
                     "target_area_m2": ratio_pct / 100.0 * area}
        tasks.append(LabeledTask(tid, level, text, layout_ref, label, t))
    return tasks


def _line_label(coords, end: str, delta_m: float) -> tuple[float, float]:
    path = coords if end == "tail" else coords[::-1]
    if delta_m < 0:
        return point_along(path, arc_length_m(path) + delta_m)
    bearing = (initial_bearing(path[-1], path[-2]) + 180.0) % 360.0
    return destination(path[-1], bearing, delta_m)


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------

def _sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s]


def perturb_instruction(task: LabeledTask | str, variant_seed: int) -> str:
    """Intent-preserving rewording: clause reordering, synonyms and polite padding."""
    text = task.instruction if isinstance(task, LabeledTask) else task
    if variant_seed == 0:
        return text
    g = grammar_tables()
    rng = np.random.default_rng([variant_seed, 7])
    sentences = _sentences(text)
    if len(sentences) > 2 and rng.random() < 0.7:
        head, rest = sentences[0], sentences[1:]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        sentences = [head, *rest]
    out = " ".join(sentences)

    def swap(m):
        word = m.group(0)
        options = g["synonyms"].get(word)
        if options and rng.random() < 0.6:
            return options[int(rng.integers(len(options)))]
        return word

    out = re.sub(r"[A-Za-z]+", swap, out)
    pad = g["padding"]
    if rng.random() < 0.7:
        out = pad["prefix"][int(rng.integers(len(pad["prefix"])))] + " " + out
    if rng.random() < 0.7:
        out = out + " " + pad["suffix"][int(rng.integers(len(pad["suffix"])))]
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def write_manifest(tasks: list[LabeledTask], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_record(), sort_keys=True, separators=(",", ":")) + "\n")


def read_manifest(path: str | Path) -> list[LabeledTask]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(LabeledTask.from_record(json.loads(line)))
    return out
