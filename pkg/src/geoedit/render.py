"""Side-by-side SVG panels of a layout before and after an edit.

Output bytes depend only on the inputs: coordinates are projected into
one shared frame and printed with fixed precision, features are drawn in
layout order, and a panel's markup does not depend on its position.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import shapely

from .geometry import to_shape
from .model import DEFAULT_TAXONOMY, GeoCoord, Taxonomy, UrbanLayout, classify_feature, layout_diff
from .projection import make_frame
from .tools import green_polygons

PANEL_PX = 480
MARGIN_PX = 16

STYLE = {
    "green": 'fill="#8cc084" fill-opacity="0.85" stroke="#3d7a35" stroke-width="0.6"',
    "polygon": 'fill="#d9d4cc" stroke="#9a948a" stroke-width="0.5"',
    "road": 'fill="none" stroke="#6f6f6f" stroke-width="1.6" stroke-linecap="round"',
    "line": 'fill="none" stroke="#3a6fb0" stroke-width="1.1"',
    "point": 'fill="#c0392b" stroke="#ffffff" stroke-width="0.5"',
    "highlight": 'fill="none" stroke="#e67e22" stroke-width="2.2"',
}


def _bounds(layouts):
    lons, lats = [], []
    for layout in layouts:
        for f in layout:
            for lon, lat in f.geometry.iter_coords():
                lons.append(lon)
                lats.append(lat)
    if not lons:
        return (0.0, 0.0, 0.0, 0.0)
    return min(lons), min(lats), max(lons), max(lats)


class _Canvas:
    def __init__(self, before: UrbanLayout, after: UrbanLayout):
        x0, y0, x1, y1 = _bounds((before, after))
        self.frame = make_frame(GeoCoord((x0 + x1) / 2, (y0 + y1) / 2))
        ax, ay = self.frame.to_xy(x0, y0)
        bx, by = self.frame.to_xy(x1, y1)
        span = max(bx - ax, by - ay, 1e-9)
        self.scale = (PANEL_PX - 2 * MARGIN_PX) / span
        self.ox, self.oy = ax, by

    def xy(self, lon, lat) -> str:
        x, y = self.frame.to_xy(lon, lat)
        return f"{MARGIN_PX + (x - self.ox) * self.scale:.2f},{MARGIN_PX + (self.oy - y) * self.scale:.2f}"

    def path(self, rings) -> str:
        return " ".join("M" + " L".join(self.xy(*p) for p in ring) + " Z" for ring in rings)


def _feature_markup(canvas: _Canvas, f, taxonomy: Taxonomy, highlight: bool) -> str:
    g = f.geometry
    cls = classify_feature(f, taxonomy).semantic
    fid = escape(f.id, {'"': "&quot;"})
    if g.kind == "Point":
        x, y = canvas.xy(*g.coordinates).split(",")
        out = f'<circle data-id="{fid}" cx="{x}" cy="{y}" r="2.6" {STYLE["point"]}/>'
        if highlight:
            out += f'<circle cx="{x}" cy="{y}" r="5.5" {STYLE["highlight"]}/>'
        return out
    if g.kind == "LineString":
        d = "M" + " L".join(canvas.xy(*p) for p in g.coordinates)
        style = STYLE["road"] if cls == "road" else STYLE["line"]
        out = f'<path data-id="{fid}" d="{d}" {style}/>'
        if highlight:
            out += f'<path d="{d}" {STYLE["highlight"]}/>'
        return out
    if g.is_empty:
        return ""
    d = " ".join(canvas.path(part) for part in g.polygons())
    style = STYLE["green"] if cls == "green" else STYLE["polygon"]
    out = f'<path data-id="{fid}" d="{d}" fill-rule="evenodd" {style}/>'
    if highlight:
        out += f'<path d="{d}" {STYLE["highlight"]}/>'
    return out


def _panel(canvas: _Canvas, layout: UrbanLayout, changed: set, taxonomy: Taxonomy) -> str:
    order = {"polygon": 0, "line": 1, "point": 2}
    feats = sorted(layout, key=lambda f: order[f.geometry.level])
    body = "".join(_feature_markup(canvas, f, taxonomy, f.id in changed) for f in feats)
    return f'<g class="panel">{body}</g>'


def green_area_delta(before: UrbanLayout, after: UrbanLayout,
                     taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> float:
    frame = make_frame(before.bbox_center())

    def area(layout):
        shapes = [to_shape(frame, g) for g in green_polygons(layout, taxonomy).values()]
        return shapely.union_all(shapes).area if shapes else 0.0

    return area(after) - area(before)


def render_svg(before: UrbanLayout, after: UrbanLayout, delta_area: float | None = None,
               taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> str:
    """Two panels, before on the left and after on the right, with changed features outlined."""
    diff = layout_diff(before, after)
    changed = set(diff.modified) | set(diff.added)
    canvas = _Canvas(before, after)
    if delta_area is None:
        delta_area = green_area_delta(before, after, taxonomy)
    width, height = 2 * PANEL_PX, PANEL_PX + 28
    left = _panel(canvas, before, set(), taxonomy)
    right = _panel(canvas, after, changed, taxonomy)
    caption = (f"modified {len(diff.modified)}, added {len(diff.added)}, "
               f"removed {len(diff.removed)}; green area change {delta_area:+.1f} m2")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="#f7f5f0"/>\n'
        f'<g id="before">{left}</g>\n'
        f'<g id="after" transform="translate({PANEL_PX},0)">{right}</g>\n'
        f'<line x1="{PANEL_PX}" y1="0" x2="{PANEL_PX}" y2="{PANEL_PX}" stroke="#444"/>\n'
        f'<text x="{MARGIN_PX}" y="{PANEL_PX + 18}" font-family="sans-serif" font-size="12" '
        f'data-delta-area="{delta_area:.3f}">{escape(caption)}</text>\n'
        f'</svg>\n'
    )
