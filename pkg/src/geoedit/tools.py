"""The closed registry of level-dependent tools the executor may invoke.

Informational tools return an observation payload and leave the layout
alone; state-updating tools return a new layout. Each tool receives the
current layout, its frame, the subtask arguments and the level-local
context of accepted observations.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

from .errors import GeoEditError, ToolError
from .geometry import (
    GrowthSpec,
    absorbable_parcels,
    extend_line,
    forbidden_shape,
    from_shape,
    grow_to_target,
    line_length,
    min_separation,
    translate_point,
    truncate_line,
)
from .model import (
    DEFAULT_TAXONOMY,
    Feature,
    GeoCoord,
    Geometry,
    Taxonomy,
    UrbanLayout,
    find_feature,
    is_green_polygon,
)
from .projection import PlanarFrame, geometry_area, make_frame


@dataclass(frozen=True)
class Observation:
    subtask_index: int
    tool: str
    payload: dict

    @property
    def digest(self) -> str:
        text = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Outcome:
    observation: Observation | None
    next_layout: UrbanLayout
    tool_log: str = ""
    details: dict = field(default_factory=dict)


@dataclass
class ToolContext:
    layout: UrbanLayout
    frame: PlanarFrame
    args: dict
    observations: list
    taxonomy: Taxonomy = DEFAULT_TAXONOMY

    def observed(self, tool: str) -> dict | None:
        for obs in reversed(self.observations):
            if obs.tool == tool:
                return obs.payload
        return None


def frame_for(level: str, scope, layout: UrbanLayout) -> PlanarFrame:
    """Point/line edits use the target's first vertex; polygon edits the layout center."""
    if level in ("point", "line") and scope and scope[0] in layout:
        first = next(layout.get(scope[0]).geometry.iter_coords())
        return make_frame(GeoCoord(*first))
    return make_frame(layout.bbox_center())


def green_polygons(layout: UrbanLayout, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> dict:
    return {f.id: f.geometry for f in layout if is_green_polygon(f, taxonomy)}


def _feature_of_kind(layout, fid, kind) -> Feature:
    try:
        f = find_feature(layout, fid)
    except GeoEditError as exc:
        raise ToolError(str(exc)) from exc
    if f.geometry.kind != kind:
        raise ToolError(f"{fid} is a {f.geometry.kind}, expected {kind}")
    return f


# ---------------------------------------------------------------------------
# informational
# ---------------------------------------------------------------------------

def locate(ctx: ToolContext) -> dict:
    fid = ctx.args["id"]
    f = find_feature_or_fail(ctx.layout, fid)
    lon, lat = next(f.geometry.iter_coords())
    return {"id": fid, "kind": f.geometry.kind, "lon": lon, "lat": lat}


def measure_length(ctx: ToolContext) -> dict:
    f = _feature_of_kind(ctx.layout, ctx.args["id"], "LineString")
    return {"id": f.id, "length_m": line_length(ctx.frame, f.geometry),
            "vertices": len(f.geometry.coordinates)}


def inventory_greens(ctx: ToolContext) -> dict:
    greens = green_polygons(ctx.layout, ctx.taxonomy)
    total = sum(geometry_area(ctx.frame, g) for g in greens.values())
    return {"ids": sorted(greens), "count": len(greens), "total_area_m2": total}


def build_forbidden(ctx: ToolContext) -> dict:
    spec = growth_spec(ctx.args)
    shp = forbidden_shape(ctx.frame, ctx.layout, spec, ctx.taxonomy)
    parts = 0 if shp.is_empty else len(getattr(shp, "geoms", [shp]))
    return {"area_m2": float(shp.area), "parts": parts, "mode": spec.mode,
            "road_buffer_m": spec.road_buffer_m}


def spacing_report(ctx: ToolContext) -> dict:
    spacing = float(ctx.args.get("spacing_m", 0.0))
    greens = green_polygons(ctx.layout, ctx.taxonomy)
    ids = sorted(greens)
    closest = None
    violations = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            d = min_separation(ctx.frame, greens[a], greens[b])
            closest = d if closest is None else min(closest, d)
            if d < spacing - 0.05:
                violations.append([a, b, round(d, 3)])
    return {"spacing_m": spacing, "pair_count": len(ids) * (len(ids) - 1) // 2,
            "min_separation_m": closest, "violation_count": len(violations),
            "violations": violations}


def find_feature_or_fail(layout, fid) -> Feature:
    try:
        return find_feature(layout, fid)
    except GeoEditError as exc:
        raise ToolError(str(exc)) from exc


# ---------------------------------------------------------------------------
# state-updating
# ---------------------------------------------------------------------------

def translate(ctx: ToolContext) -> tuple[UrbanLayout, dict]:
    f = _feature_of_kind(ctx.layout, ctx.args["id"], "Point")
    seen = ctx.observed("locate")
    lon, lat = (seen["lon"], seen["lat"]) if seen and seen["id"] == f.id else f.geometry.coordinates
    q = translate_point(ctx.frame, GeoCoord(lon, lat), float(ctx.args["bearing"]),
                        float(ctx.args["dist_m"]))
    moved = f.with_geometry(Geometry.point(q.lon, q.lat))
    return ctx.layout.replace(moved), {"edit_coord": [q.lon, q.lat]}


def adjust_line(ctx: ToolContext) -> tuple[UrbanLayout, dict]:
    f = _feature_of_kind(ctx.layout, ctx.args["id"], "LineString")
    delta = float(ctx.args["delta_m"])
    end = ctx.args["end"]
    seen = ctx.observed("measure_length")
    length = seen["length_m"] if seen and seen["id"] == f.id else line_length(ctx.frame, f.geometry)
    try:
        if delta < 0:
            if -delta >= length:
                raise ToolError(f"cannot shorten {f.id} by {-delta:g} m; it is {length:.2f} m long")
            geom = truncate_line(ctx.frame, f.geometry, end, -delta)
        else:
            geom = extend_line(ctx.frame, f.geometry, end, delta)
    except GeoEditError as exc:
        if isinstance(exc, ToolError):
            raise
        raise ToolError(f"{type(exc).__name__}: {exc}") from exc
    tip = geom.coordinates[-1] if end == "tail" else geom.coordinates[0]
    return ctx.layout.replace(f.with_geometry(geom)), {"edit_coord": list(tip)}


def growth_spec(args: dict) -> GrowthSpec:
    if args.get("target_ratio") is None:
        raise ToolError("growth requested without a target ratio")
    return GrowthSpec(
        target_ratio=float(args["target_ratio"]),
        road_buffer_m=float(args.get("road_buffer_m", 2.0)),
        spacing_m=float(args.get("spacing_m", 8.0)),
        mode=args.get("mode", "preserve"),
        area_tol_rel=float(args.get("area_tol_rel", 0.01)),
        no_merge=bool(args.get("no_merge", False)),
    )


def grow(ctx: ToolContext) -> tuple[UrbanLayout, dict]:
    spec = growth_spec(ctx.args)
    greens = green_polygons(ctx.layout, ctx.taxonomy)
    inventory = ctx.observed("inventory_greens")
    if inventory is not None:
        greens = {gid: greens[gid] for gid in inventory["ids"] if gid in greens}
    forbidden = from_shape(ctx.frame, forbidden_shape(ctx.frame, ctx.layout, spec, ctx.taxonomy))
    parcels = absorbable_parcels(ctx.layout, spec, ctx.taxonomy)
    try:
        result = grow_to_target(ctx.frame, greens, spec, forbidden, parcels)
    except GeoEditError as exc:
        raise ToolError(f"{type(exc).__name__}: {exc}") from exc
    updates = [ctx.layout.get(gid).with_geometry(g) for gid, g in result.new_greens.items()]
    updates += [ctx.layout.get(pid).with_geometry(g)
                for pid, g in result.trimmed_parcels.items() if not g.is_empty]
    layout = ctx.layout.replace(*updates).without(result.absorbed_ids)
    details = {
        "feasible": result.feasible,
        "achieved_delta_area_m2": result.achieved_delta_area,
        "target_delta_area_m2": result.target_delta_area,
        "buffer_distance_m": result.buffer_distance,
        "absorbed_ids": list(result.absorbed_ids),
        "trimmed_ids": sorted(result.trimmed_parcels),
        "merged_pairs": [list(p) for p in result.merged_pairs],
        "soft_violations": [[a, b, round(d, 3)] for (a, b), d in result.soft_violations],
        "spacing_relaxed": result.spacing_relaxed,
    }
    return layout, details


@dataclass(frozen=True)
class Tool:
    name: str
    kind: str
    fn: Callable


REGISTRY = {t.name: t for t in (
    Tool("locate", "informational", locate),
    Tool("measure_length", "informational", measure_length),
    Tool("inventory_greens", "informational", inventory_greens),
    Tool("build_forbidden", "informational", build_forbidden),
    Tool("spacing_report", "informational", spacing_report),
    Tool("translate", "state_updating", translate),
    Tool("adjust_line", "state_updating", adjust_line),
    Tool("grow", "state_updating", grow),
)}


def get_tool(name: str) -> Tool:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ToolError(f"unknown tool {name!r}") from None
