"""Level-dependent geometry tools: point moves, line edits, validity, growth.

Every function works in a :class:`~geoedit.projection.PlanarFrame` and
returns geographic geometries. Boolean polygon operations (buffer, union,
difference) are delegated to shapely in planar coordinates; the validity
check is a self-contained pairwise segment test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPoint, MultiPolygon, Point, Polygon
from shapely.geometry.polygon import orient

from .errors import (
    DegenerateTerminalSegment,
    EmptyGreenSet,
    InvalidGeometry,
    TruncationExceedsLength,
)
from .model import (
    DEFAULT_TAXONOMY,
    GeoCoord,
    Geometry,
    Taxonomy,
    UrbanLayout,
    classify_feature,
)
from .projection import PlanarFrame, ring_signed_area

BEARINGS = {
    "north": 0.0, "northeast": 45.0, "east": 90.0, "southeast": 135.0,
    "south": 180.0, "southwest": 225.0, "west": 270.0, "northwest": 315.0,
}
ARC_TOLERANCE_M = 0.05
# Grown polygons keep this much extra distance from forbidden areas so that
# 7-decimal serialization cannot push a vertex across the boundary.
CLIP_CLEARANCE_M = 0.02
SPACING_SLACK_M = 0.05
MIN_PART_AREA_M2 = 1e-4
_TOUCH_EPS_M = 1e-7


# ---------------------------------------------------------------------------
# shapely bridge
# ---------------------------------------------------------------------------

def _ring_xy(frame: PlanarFrame, ring) -> np.ndarray:
    return frame.project_array(ring)


def to_shape(frame: PlanarFrame, geom: Geometry):
    """Planar shapely geometry for ``geom``."""
    if geom.kind == "Point":
        return Point(frame.to_xy(*geom.coordinates))
    if geom.kind == "LineString":
        return LineString(frame.project_array(geom.coordinates))
    polys = [Polygon(_ring_xy(frame, p[0]), [_ring_xy(frame, r) for r in p[1:]])
             for p in geom.polygons()]
    if geom.kind == "Polygon":
        return polys[0]
    return MultiPolygon(polys)


def _unproject_ring(frame, coords) -> tuple:
    ll = frame.unproject_array(np.asarray(coords))
    ring = [(float(x), float(y)) for x, y in ll]
    ring[-1] = ring[0]
    return tuple(ring)


def polygon_parts(shp) -> list[Polygon]:
    if shp is None or shp.is_empty:
        return []
    if isinstance(shp, Polygon):
        return [shp]
    if isinstance(shp, MultiPolygon):
        return list(shp.geoms)
    return [g for sub in getattr(shp, "geoms", []) for g in polygon_parts(sub)]


def from_shape(frame: PlanarFrame, shp) -> Geometry:
    """Geographic Polygon/MultiPolygon (or Point/LineString) from planar shapely."""
    if isinstance(shp, Point):
        return Geometry.point(*frame.to_lonlat(shp.x, shp.y))
    if isinstance(shp, LineString):
        return Geometry.line(frame.unproject_array(np.asarray(shp.coords)))
    parts = []
    for poly in polygon_parts(shp):
        if poly.area < MIN_PART_AREA_M2:
            continue
        poly = orient(poly, sign=1.0)
        rings = [_unproject_ring(frame, poly.exterior.coords)]
        rings += [_unproject_ring(frame, r.coords) for r in poly.interiors]
        parts.append(tuple(rings))
    if not parts:
        return Geometry.empty()
    if len(parts) == 1:
        return Geometry("Polygon", parts[0])
    return Geometry("MultiPolygon", tuple(parts))


def _quad_segs(d: float, tol: float = ARC_TOLERANCE_M) -> int:
    if d <= tol:
        return 2
    step = 2.0 * math.acos(1.0 - tol / d)
    return max(2, math.ceil((math.pi / 2) / step))


# ---------------------------------------------------------------------------
# points and lines
# ---------------------------------------------------------------------------

def bearing_vector(bearing: float) -> tuple[float, float]:
    """Unit (east, north) vector for a compass bearing in degrees."""
    b = math.radians(bearing)
    return (math.sin(b), math.cos(b))


def translate_point(frame: PlanarFrame, p: GeoCoord, bearing: float, dist: float) -> GeoCoord:
    if dist < 0:
        raise ValueError("displacement must be non-negative")
    if dist == 0:
        return p
    x, y = frame.to_xy(p.lon, p.lat)
    ux, uy = bearing_vector(bearing)
    return GeoCoord(*frame.to_lonlat(x + dist * ux, y + dist * uy))


def _segment_lengths(xy: np.ndarray) -> np.ndarray:
    return np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))


def line_length(frame: PlanarFrame, line: Geometry) -> float:
    if line.kind != "LineString":
        raise InvalidGeometry(f"expected LineString, got {line.kind}")
    return float(_segment_lengths(frame.project_array(line.coordinates)).sum())


def _cut_from_head(frame, coords, s):
    xy = frame.project_array(coords)
    seg = _segment_lengths(xy)
    walked = 0.0
    for i, length in enumerate(seg):
        if walked + length > s:
            t = (s - walked) / length
            if t <= 1e-12:
                return coords[i:]
            cut = xy[i] + t * (xy[i + 1] - xy[i])
            head = tuple(float(v) for v in frame.to_lonlat(*cut))
            return (head,) + tuple(coords[i + 1:])
        walked += length
    raise TruncationExceedsLength("cut position beyond line end")


def truncate_line(frame: PlanarFrame, line: Geometry, end: str, s: float) -> Geometry:
    """Remove ``s`` meters of arc length from the ``head`` or ``tail`` end."""
    total = line_length(frame, line)
    if s < 0:
        raise ValueError("truncation length must be non-negative")
    if s >= total:
        raise TruncationExceedsLength(
            f"cannot remove {s:.3f} m from a {total:.3f} m line")
    if s == 0:
        return line
    coords = line.coordinates
    if end == "head":
        return Geometry("LineString", _cut_from_head(frame, coords, s))
    if end == "tail":
        return Geometry("LineString", _cut_from_head(frame, coords[::-1], s)[::-1])
    raise ValueError(f"unknown line end {end!r}")


def extend_line(frame: PlanarFrame, line: Geometry, end: str, s: float) -> Geometry:
    """Add one vertex ``s`` meters past ``end`` along the terminal segment."""
    if s < 0:
        raise ValueError("extension length must be non-negative")
    coords = line.coordinates
    if end == "tail":
        a, b = coords[-2], coords[-1]
    elif end == "head":
        a, b = coords[1], coords[0]
    else:
        raise ValueError(f"unknown line end {end!r}")
    ax, ay = frame.to_xy(*a)
    bx, by = frame.to_xy(*b)
    seg = math.hypot(bx - ax, by - ay)
    if seg < 1e-9:
        raise DegenerateTerminalSegment(f"terminal segment at {end} has zero length")
    if s == 0:
        return line
    new = tuple(float(v) for v in frame.to_lonlat(bx + (bx - ax) / seg * s,
                                                   by + (by - ay) / seg * s))
    if end == "tail":
        return Geometry("LineString", coords + (new,))
    return Geometry("LineString", (new,) + coords)


# ---------------------------------------------------------------------------
# validity
# ---------------------------------------------------------------------------

@dataclass
class ValidityReport:
    valid: bool
    defects: list = field(default_factory=list)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segment_pairs_intersecting(segs: np.ndarray, ring_id: np.ndarray,
                                pos: np.ndarray, ring_len: np.ndarray):
    """Yield (i, j, kind) for offending segment pairs.

    ``segs`` rows are (x1, y1, x2, y2). Segments of the same ring must not
    meet unless adjacent; segments of different rings may touch but must
    not cross or overlap.
    """
    n = len(segs)
    if n < 2:
        return
    x1, y1, x2, y2 = segs.T
    lo_x, hi_x = np.minimum(x1, x2), np.maximum(x1, x2)
    lo_y, hi_y = np.minimum(y1, y2), np.maximum(y1, y2)
    lengths = np.hypot(x2 - x1, y2 - y1)
    lengths = np.where(lengths > 0, lengths, 1.0)
    block = 256
    for start in range(0, n, block):
        i = np.arange(start, min(start + block, n))[:, None]
        j = np.arange(n)[None, :]
        mask = j > i
        mask &= (lo_x[i] <= hi_x[j] + _TOUCH_EPS_M) & (lo_x[j] <= hi_x[i] + _TOUCH_EPS_M)
        mask &= (lo_y[i] <= hi_y[j] + _TOUCH_EPS_M) & (lo_y[j] <= hi_y[i] + _TOUCH_EPS_M)
        ii, jj = np.nonzero(mask)
        if len(ii) == 0:
            continue
        ii = ii + start
        # signed distances of each endpoint to the other segment's line
        d1 = _orient(x1[ii], y1[ii], x2[ii], y2[ii], x1[jj], y1[jj]) / lengths[ii]
        d2 = _orient(x1[ii], y1[ii], x2[ii], y2[ii], x2[jj], y2[jj]) / lengths[ii]
        d3 = _orient(x1[jj], y1[jj], x2[jj], y2[jj], x1[ii], y1[ii]) / lengths[jj]
        d4 = _orient(x1[jj], y1[jj], x2[jj], y2[jj], x2[ii], y2[ii]) / lengths[jj]
        e = _TOUCH_EPS_M
        proper = (((d1 > e) & (d2 < -e)) | ((d1 < -e) & (d2 > e))) & \
                 (((d3 > e) & (d4 < -e)) | ((d3 < -e) & (d4 > e)))
        zero = [np.abs(d) <= e for d in (d1, d2, d3, d4)]
        touch = np.zeros_like(proper)
        for z, (px, py, sx1, sy1, sx2, sy2) in zip(zero, (
                (x1[jj], y1[jj], x1[ii], y1[ii], x2[ii], y2[ii]),
                (x2[jj], y2[jj], x1[ii], y1[ii], x2[ii], y2[ii]),
                (x1[ii], y1[ii], x1[jj], y1[jj], x2[jj], y2[jj]),
                (x2[ii], y2[ii], x1[jj], y1[jj], x2[jj], y2[jj]))):
            within = ((np.minimum(sx1, sx2) - e <= px) & (px <= np.maximum(sx1, sx2) + e) &
                      (np.minimum(sy1, sy2) - e <= py) & (py <= np.maximum(sy1, sy2) + e))
            touch |= z & within
        collinear = zero[0] & zero[1]
        same = ring_id[ii] == ring_id[jj]
        gap = np.abs(pos[ii] - pos[jj])
        adjacent = same & ((gap == 1) | (gap == ring_len[ii] - 1))
        # adjacent segments only share their common vertex; folding back is a spike
        dx_i, dy_i = x2[ii] - x1[ii], y2[ii] - y1[ii]
        dx_j, dy_j = x2[jj] - x1[jj], y2[jj] - y1[jj]
        opposite = (dx_i * dx_j + dy_i * dy_j) < 0
        spike = adjacent & collinear & opposite
        same_bad = same & ~adjacent & (proper | touch)
        overlap = _overlap_len(x1[ii], y1[ii], x2[ii], y2[ii],
                               x1[jj], y1[jj], x2[jj], y2[jj]) > e
        cross_bad = ~same & (proper | (collinear & touch & overlap))
        for k in np.nonzero(same_bad | cross_bad | spike)[0]:
            kind = "spike" if spike[k] else "self-intersection" if same[k] else "ring-intersection"
            yield int(ii[k]), int(jj[k]), kind


def _overlap_len(ax, ay, bx, by, cx, cy, dx, dy):
    ux, uy = bx - ax, by - ay
    norm = np.hypot(ux, uy)
    norm = np.where(norm > 0, norm, 1.0)
    ux, uy = ux / norm, uy / norm
    t = [np.zeros_like(ax), (bx - ax) * ux + (by - ay) * uy]
    s = [(cx - ax) * ux + (cy - ay) * uy, (dx - ax) * ux + (dy - ay) * uy]
    lo = np.maximum(np.minimum(*t), np.minimum(*s))
    hi = np.minimum(np.maximum(*t), np.maximum(*s))
    return hi - lo


def _point_in_ring(px, py, ring_xy):
    x, y = ring_xy[:-1, 0], ring_xy[:-1, 1]
    x2, y2 = ring_xy[1:, 0], ring_xy[1:, 1]
    cond = (y > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x + (py - y) * (x2 - x) / (y2 - y)
    return bool(np.count_nonzero(cond & (px < xint)) % 2)


def check_validity(frame: PlanarFrame, g: Geometry) -> ValidityReport:
    defects = []
    if g.kind == "Point":
        return ValidityReport(True, [])
    if g.kind == "LineString":
        if len(g.coordinates) < 2:
            defects.append("too-few-coordinates")
        elif line_length(frame, g) <= 0:
            defects.append("zero-length")
        return ValidityReport(not defects, defects)

    segs, ring_id, pos, ring_len = [], [], [], []
    rings_xy = []
    rid = 0
    for p_index, part in enumerate(g.polygons()):
        part_rings = []
        for r_index, ring in enumerate(part):
            if len(ring) < 4:
                defects.append(f"ring {p_index}.{r_index}: fewer than 4 coordinates")
                continue
            if ring[0] != ring[-1]:
                defects.append(f"ring {p_index}.{r_index}: not closed")
                continue
            xy = frame.project_array(ring)
            if abs(ring_signed_area(xy)) <= 1e-9:
                defects.append(f"ring {p_index}.{r_index}: zero area")
            part_rings.append(xy)
            seg = np.hstack((xy[:-1], xy[1:]))
            keep = np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1]) > 0
            segs.append(seg[keep])
            k = int(keep.sum())
            ring_id.append(np.full(k, rid))
            pos.append(np.arange(k))
            ring_len.append(np.full(k, k))
            rid += 1
        rings_xy.append(part_rings)
    if any("coordinates" in d or "closed" in d for d in defects):
        return ValidityReport(False, defects)
    if segs:
        all_segs = np.vstack(segs)
        hits = list(_segment_pairs_intersecting(
            all_segs, np.concatenate(ring_id), np.concatenate(pos), np.concatenate(ring_len)))
        for i, j, kind in hits[:10]:
            defects.append(f"{kind} between segments {i} and {j}")
    if defects:
        return ValidityReport(False, defects)
    # holes inside their exterior; parts not nested in each other
    for p_index, part in enumerate(rings_xy):
        outer = part[0]
        for h_index, hole in enumerate(part[1:], 1):
            cx, cy = _interior_probe(hole)
            if not _point_in_ring(cx, cy, outer):
                defects.append(f"hole {p_index}.{h_index} outside its exterior")
    for a_index, a in enumerate(rings_xy):
        for b_index, b in enumerate(rings_xy):
            if a_index == b_index:
                continue
            cx, cy = _interior_probe(b[0])
            if _point_in_ring(cx, cy, a[0]) and not any(
                    _point_in_ring(cx, cy, h) for h in a[1:]):
                defects.append(f"part {b_index} overlaps part {a_index}")
    return ValidityReport(not defects, defects)


def _interior_probe(ring_xy):
    """A vertex midpoint nudged inward; good enough for containment probes."""
    poly = Polygon(ring_xy)
    p = poly.representative_point()
    return p.x, p.y


# ---------------------------------------------------------------------------
# buffers and growth
# ---------------------------------------------------------------------------

def _buffer_shape(shp, d: float):
    if d <= 0:
        return shp
    return shp.buffer(d, quad_segs=_quad_segs(d), join_style="round")


def buffer_polygon(frame: PlanarFrame, poly: Geometry, d: float) -> Geometry:
    """Outward offset by ``d`` meters with round joins (0.05 m arc tolerance)."""
    if poly.kind not in ("Polygon", "MultiPolygon"):
        raise InvalidGeometry(f"cannot buffer {poly.kind} as a polygon")
    if d < 0:
        raise ValueError("buffer distance must be non-negative")
    report = check_validity(frame, poly)
    if not report.valid:
        raise InvalidGeometry("; ".join(report.defects))
    if d == 0:
        return poly
    return from_shape(frame, _buffer_shape(to_shape(frame, poly), d))


@dataclass(frozen=True)
class GrowthSpec:
    target_ratio: float
    road_buffer_m: float = 2.0
    spacing_m: float = 8.0
    mode: str = "preserve"  # preserve | absorb
    area_tol_rel: float = 0.01
    max_bisect_iters: int = 60
    no_merge: bool = False
    d_max: float = 200.0

    def __post_init__(self):
        if not self.target_ratio > -1:
            raise ValueError("target_ratio must exceed -1")
        if self.road_buffer_m < 0 or self.spacing_m < 0:
            raise ValueError("buffers must be non-negative")
        if not self.area_tol_rel > 0:
            raise ValueError("area_tol_rel must be positive")
        if self.mode not in ("preserve", "absorb"):
            raise ValueError(f"unknown growth mode {self.mode!r}")


@dataclass
class GrowthResult:
    new_greens: dict
    absorbed_ids: list
    achieved_delta_area: float
    target_delta_area: float
    buffer_distance: float
    feasible: bool
    soft_violations: list = field(default_factory=list)
    merged_pairs: list = field(default_factory=list)
    trimmed_parcels: dict = field(default_factory=dict)
    spacing_relaxed: bool = False
    evaluations: int = 0


def road_shapes(frame: PlanarFrame, layout: UrbanLayout,
                taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> list:
    return [to_shape(frame, f.geometry) for f in layout
            if classify_feature(f, taxonomy).semantic == "road"]


def forbidden_shape(frame: PlanarFrame, layout: UrbanLayout, spec: GrowthSpec,
                    taxonomy: Taxonomy = DEFAULT_TAXONOMY):
    pieces = []
    for road in road_shapes(frame, layout, taxonomy):
        if spec.road_buffer_m > 0:
            pieces.append(road.buffer(spec.road_buffer_m,
                                      quad_segs=_quad_segs(spec.road_buffer_m, CLIP_CLEARANCE_M / 4)))
    for f in layout:
        if f.geometry.level != "polygon":
            continue
        if classify_feature(f, taxonomy).semantic == "green":
            continue
        if spec.mode == "preserve" or taxonomy.is_protected(f.properties):
            pieces.append(to_shape(frame, f.geometry))
    if not pieces:
        return Polygon()
    return shapely.union_all(pieces)


def forbidden_region(frame: PlanarFrame, layout: UrbanLayout, spec: GrowthSpec,
                     taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> Geometry:
    """Road corridors plus the non-green parcels growth may not enter."""
    return from_shape(frame, forbidden_shape(frame, layout, spec, taxonomy))


def absorbable_parcels(layout: UrbanLayout, spec: GrowthSpec,
                       taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> dict:
    if spec.mode != "absorb":
        return {}
    return {f.id: f.geometry for f in layout
            if f.geometry.level == "polygon"
            and classify_feature(f, taxonomy).semantic != "green"
            and not taxonomy.is_protected(f.properties)}


def _voronoi_cells(originals: dict, sample_step: float = 2.0) -> dict:
    """Approximate nearest-green cell of each green, from boundary samples."""
    owner, points, seen = [], [], set()
    for gid, shp in originals.items():
        boundary = shapely.segmentize(shp.boundary, sample_step)
        for x, y in shapely.get_coordinates(boundary):
            key = (round(x, 6), round(y, 6))
            if key in seen:
                continue
            seen.add(key)
            points.append((x, y))
            owner.append(gid)
    hull = shapely.union_all(list(originals.values())).envelope.buffer(1000.0)
    cells = shapely.voronoi_polygons(MultiPoint(points), extend_to=hull, ordered=True)
    grouped: dict = {gid: [] for gid in originals}
    for gid, cell in zip(owner, cells.geoms):
        grouped[gid].append(cell)
    return {gid: shapely.union_all(c) for gid, c in grouped.items()}


def _components_touching(shp, core):
    parts = [p for p in polygon_parts(shp) if p.intersects(core)]
    if not parts:
        return core
    return parts[0] if len(parts) == 1 else MultiPolygon(parts)


class _Grower:
    def __init__(self, originals: dict, forbidden, spec: GrowthSpec, use_spacing: bool):
        self.originals = originals
        self.spec = spec
        self.blocked = (forbidden.buffer(CLIP_CLEARANCE_M, quad_segs=2)
                        if not forbidden.is_empty else forbidden)
        self.limits: dict = {}
        ids = list(originals)
        cells = _voronoi_cells(originals) if spec.no_merge and len(ids) > 1 else None
        for gid in ids:
            limit = None
            if cells is not None:
                gap = spec.spacing_m if use_spacing else 2 * CLIP_CLEARANCE_M
                limit = cells[gid].buffer(-gap / 2.0)
            exclusion = None
            if use_spacing and spec.spacing_m > 0 and len(ids) > 1 and cells is None:
                others = [originals[o] for o in ids if o != gid]
                exclusion = shapely.union_all(others).buffer(
                    spec.spacing_m, quad_segs=_quad_segs(spec.spacing_m))
            self.limits[gid] = (limit, exclusion)
        self.base_area = shapely.union_all(list(originals.values())).area

    def shapes(self, d: float) -> dict:
        out = {}
        for gid, core in self.originals.items():
            if d <= 0:
                out[gid] = core
                continue
            region = _buffer_shape(core, d)
            limit, exclusion = self.limits[gid]
            if limit is not None:
                region = region.intersection(limit)
            if not self.blocked.is_empty:
                region = region.difference(self.blocked)
            if exclusion is not None:
                region = region.difference(exclusion)
            grown = shapely.union_all([core, region])
            out[gid] = _components_touching(grown, core)
        return out

    def delta(self, shapes: dict) -> float:
        return shapely.union_all(list(shapes.values())).area - self.base_area


def _solve(grower: _Grower, target: float, spec: GrowthSpec):
    """Bisection for the uniform buffer distance; returns (d, shapes, delta, ok, evals)."""
    tol = spec.area_tol_rel / 2.0
    evals = 0

    def f(d):
        nonlocal evals
        evals += 1
        shapes = grower.shapes(d)
        return shapes, grower.delta(shapes)

    lo, hi = 0.0, None
    d = 1.0
    best = (0.0, grower.shapes(0.0), 0.0)
    while True:
        shapes, delta = f(d)
        if abs(delta - target) <= tol * target:
            return d, shapes, delta, True, evals
        if delta > target:
            hi, hi_state = d, (shapes, delta)
            break
        lo, best = d, (d, shapes, delta)
        if d >= spec.d_max:
            return best[0], best[1], best[2], False, evals
        d = min(2.0 * d, spec.d_max)
    for _ in range(spec.max_bisect_iters):
        mid = 0.5 * (lo + hi)
        shapes, delta = f(mid)
        if abs(delta - target) <= tol * target:
            return mid, shapes, delta, True, evals
        if delta > target:
            hi, hi_state = mid, (shapes, delta)
        else:
            lo, best = mid, (mid, shapes, delta)
    # accept the closer bracket end if it is within the caller's tolerance
    cand = [(abs(hi_state[1] - target), hi, hi_state[0], hi_state[1]),
            (abs(best[2] - target), best[0], best[1], best[2])]
    err, d, shapes, delta = min(cand, key=lambda c: c[0])
    return d, shapes, delta, err <= spec.area_tol_rel * target, evals


def grow_to_target(frame: PlanarFrame, greens: Mapping[str, Geometry], spec: GrowthSpec,
                   forbidden: Geometry, parcels: Mapping[str, Geometry] | None = None
                   ) -> GrowthResult:
    """Grow all greens by one shared buffer distance until the area target is met.

    The distance is found by bisection on ``[0, spec.d_max]``. Each green is
    clipped to the complement of ``forbidden`` and, when spacing applies,
    kept away from the other greens. Spacing is a soft preference: if the
    target is unreachable with it, the solve is repeated without it.
    ``parcels`` are absorbable non-green polygons (absorb mode); fully
    covered ones are reported in ``absorbed_ids``, partly covered ones are
    returned trimmed in ``trimmed_parcels``.
    """
    if not greens:
        raise EmptyGreenSet("no eligible green polygons")
    originals = {gid: to_shape(frame, g) for gid, g in greens.items()}
    base_sum = sum(p.area for p in originals.values())
    target = spec.target_ratio * base_sum
    if spec.target_ratio < 0:
        raise ValueError("polygon shrinking is not supported")
    if target == 0:
        return GrowthResult(dict(greens), [], 0.0, 0.0, 0.0, True,
                            soft_violations=_spacing_violations(originals, spec.spacing_m))

    fshape = to_shape(frame, forbidden) if not forbidden.is_empty else Polygon()
    relaxed = False
    grower = _Grower(originals, fshape, spec, use_spacing=True)
    d, shapes, delta, ok, evals = _solve(grower, target, spec)
    if not ok and spec.spacing_m > 0 and len(originals) > 1:
        grower = _Grower(originals, fshape, spec, use_spacing=False)
        d2, shapes2, delta2, ok2, evals2 = _solve(grower, target, spec)
        evals += evals2
        if ok2 or delta2 > delta:
            d, shapes, delta, ok, relaxed = d2, shapes2, delta2, ok2, True

    new_greens = {}
    for gid, shp in shapes.items():
        new_greens[gid] = greens[gid] if shp.equals_exact(originals[gid], 0) \
            else from_shape(frame, shp)

    merged = []
    ids = list(originals)
    for a_i, a in enumerate(ids):
        for b in ids[a_i + 1:]:
            if not originals[a].intersects(originals[b]) and shapes[a].intersects(shapes[b]):
                merged.append((a, b))

    absorbed, trimmed = [], {}
    if parcels:
        green_union = shapely.union_all(list(shapes.values()))
        for pid, pgeom in parcels.items():
            pshape = to_shape(frame, pgeom)
            if not pshape.intersects(green_union):
                continue
            rest = pshape.difference(green_union)
            if rest.area < 1.0:
                absorbed.append(pid)
            elif rest.area < pshape.area - MIN_PART_AREA_M2:
                trimmed[pid] = from_shape(frame, rest)

    return GrowthResult(
        new_greens=new_greens,
        absorbed_ids=absorbed,
        achieved_delta_area=float(delta),
        target_delta_area=float(target),
        buffer_distance=float(d),
        feasible=bool(ok),
        soft_violations=_spacing_violations(shapes, spec.spacing_m),
        merged_pairs=merged,
        trimmed_parcels=trimmed,
        spacing_relaxed=relaxed,
        evaluations=evals,
    )


def _spacing_violations(shapes: dict, spacing_m: float) -> list:
    out = []
    ids = list(shapes)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            dist = float(shapes[a].distance(shapes[b]))
            if dist < spacing_m - SPACING_SLACK_M:
                out.append(((a, b), dist))
    return out


def min_separation(frame: PlanarFrame, a: Geometry, b: Geometry) -> float:
    """Shortest distance in meters between two geometries (0 if they meet)."""
    return float(to_shape(frame, a).distance(to_shape(frame, b)))
