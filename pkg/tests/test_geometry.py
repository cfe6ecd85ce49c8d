import math

import numpy as np
import pytest
import shapely
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from geoedit.errors import DegenerateTerminalSegment, EmptyGreenSet, TruncationExceedsLength
from geoedit.geometry import (
    ARC_TOLERANCE_M,
    GrowthSpec,
    absorbable_parcels,
    buffer_polygon,
    check_validity,
    extend_line,
    forbidden_region,
    grow_to_target,
    line_length,
    min_separation,
    to_shape,
    translate_point,
    truncate_line,
)
from geoedit.model import Feature, GeoCoord, Geometry, UrbanLayout, classify_feature
from geoedit.projection import geometry_area, make_frame
from geoedit.tools import frame_for, green_polygons

from conftest import CYCLEWAY_ID, FRAME, ORIGIN, park, rect, xy_line, xy_ring


def planar(geom):
    return FRAME.project_array(geom.coordinates)


def dense_point_at(xy, s, step=0.01):
    """Walk the polyline in small steps and return the point at arc length s."""
    walked = 0.0
    for a, b in zip(xy[:-1], xy[1:]):
        seg = float(np.hypot(*(b - a)))
        n = max(1, math.ceil(seg / step))
        ts = np.linspace(0, 1, n + 1)
        pts = a + ts[:, None] * (b - a)
        cum = walked + np.concatenate(([0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))))
        if cum[-1] >= s:
            i = int(np.searchsorted(cum, s))
            return pts[i]
        walked = cum[-1]
    raise ValueError("beyond end")


# --- points --------------------------------------------------------------

def test_zero_translation_is_identity():
    p = GeoCoord(3.0, 50.0)
    assert translate_point(make_frame(p), p, 0, 0) == p


def test_east_translation_at_equator():
    origin = GeoCoord(0, 0)
    q = translate_point(make_frame(origin), origin, 90, 111.195)
    assert q.lon == pytest.approx(0.001, rel=1e-4)
    assert abs(q.lat) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 359.99), st.floats(0.1, 1000))
def test_translation_preserves_distance(bearing, dist):
    q = translate_point(FRAME, ORIGIN, bearing, dist)
    x, y = FRAME.to_xy(q.lon, q.lat)
    assert math.hypot(x, y) == pytest.approx(dist, rel=1e-6)
    turn = (math.degrees(math.atan2(x, y)) - bearing + 180) % 360 - 180
    assert abs(turn) < 1e-6


# --- lines ---------------------------------------------------------------

def test_line_length_examples():
    assert line_length(FRAME, xy_line([(0, 0), (100, 0)])) == pytest.approx(100, rel=1e-9)
    triangle = xy_line([(0, 0), (100, 0), (50, 50 * math.sqrt(3)), (0, 0)])
    assert line_length(FRAME, triangle) == pytest.approx(300, rel=1e-9)


def test_fixture_cycleway_length_matches_dense_sampling(patch_a):
    line = patch_a.get(CYCLEWAY_ID).geometry
    frame = frame_for("line", (CYCLEWAY_ID,), patch_a)
    xy = frame.project_array(line.coordinates)
    dense = 0.0
    for a, b in zip(xy[:-1], xy[1:]):
        n = max(1, math.ceil(float(np.hypot(*(b - a))) / 0.01))
        pts = a + np.linspace(0, 1, n + 1)[:, None] * (b - a)
        dense += float(np.hypot(*np.diff(pts, axis=0).T).sum())
    assert line_length(frame, line) == pytest.approx(dense, rel=1e-6)


def test_truncate_single_segment():
    out = truncate_line(FRAME, xy_line([(0, 0), (100, 0)]), "tail", 17)
    assert line_length(FRAME, out) == pytest.approx(83, rel=1e-9)
    assert planar(out)[-1] == pytest.approx([83, 0], abs=1e-6)


def test_zero_adjustments_are_identity():
    line = xy_line([(0, 0), (30, 5), (60, 0)])
    assert truncate_line(FRAME, line, "head", 0) == line
    assert extend_line(FRAME, line, "tail", 0) == line


def test_truncate_across_vertices_matches_dense_oracle():
    pts = [(0, 0), (10, 0), (20, 10), (20, 40), (50, 40)]
    line = xy_line(pts)
    xy = planar(line)
    total = line_length(FRAME, line)
    out = truncate_line(FRAME, line, "tail", 45)  # crosses (50,40) and (20,40)
    assert len(out.coordinates) == 4
    expected = dense_point_at(xy, total - 45)
    assert planar(out)[-1] == pytest.approx(expected, abs=0.01)
    out = truncate_line(FRAME, line, "head", 30)
    assert planar(out)[0] == pytest.approx(dense_point_at(xy, 30), abs=0.01)


def test_truncate_beyond_length_rejects():
    line = xy_line([(0, 0), (10, 0)])
    for s in (line_length(FRAME, line), 10.5):
        with pytest.raises(TruncationExceedsLength):
            truncate_line(FRAME, line, "head", s)


def test_extend_is_collinear():
    out = extend_line(FRAME, xy_line([(0, 0), (100, 0)]), "tail", 50)
    assert line_length(FRAME, out) == pytest.approx(150, rel=1e-9)
    assert planar(out)[-1] == pytest.approx([150, 0], abs=1e-6)


def test_extend_degenerate_terminal_segment():
    a = FRAME.to_lonlat(0, 0)
    line = Geometry.line([FRAME.to_lonlat(-10, 0), a, a])
    with pytest.raises(DegenerateTerminalSegment):
        extend_line(FRAME, line, "tail", 5)


def test_fixture_path_head_extension(patch_a):
    line = patch_a.get(CYCLEWAY_ID).geometry
    frame = frame_for("line", (CYCLEWAY_ID,), patch_a)
    before = line_length(frame, line)
    assert line_length(frame, extend_line(frame, line, "head", 17)) == pytest.approx(
        before + 17, rel=1e-6)


polylines = st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)),
                     min_size=2, max_size=6, unique=True)


@settings(max_examples=200, deadline=None)
@given(polylines, st.sampled_from(["head", "tail"]), st.floats(0.01, 0.9))
def test_truncate_then_extend_restores_length(pts, end, frac):
    line = xy_line(pts)
    xy = planar(line)
    assume(np.all(np.hypot(*np.diff(xy, axis=0).T) > 0.5))
    total = line_length(FRAME, line)
    s = frac * total
    cut = truncate_line(FRAME, line, end, s)
    back = extend_line(FRAME, cut, end, s)
    assert line_length(FRAME, back) == pytest.approx(total, rel=2e-6)


# --- validity and buffers -------------------------------------------------

def test_square_valid_and_bow_tie_invalid():
    assert check_validity(FRAME, rect(0, 0, 1, 1)).valid
    bow = Geometry.polygon([xy_ring([(0, 0), (10, 10), (10, 0), (0, 10)])])
    report = check_validity(FRAME, bow)
    assert not report.valid
    assert any("self-intersection" in d for d in report.defects)


def test_validity_agrees_with_shapely_on_grown_fixture_greens(patch_a):
    frame = frame_for("polygon", ("all-green",), patch_a)
    for gid, g in green_polygons(patch_a).items():
        grown = buffer_polygon(frame, g, 12.5)
        assert check_validity(frame, grown).valid
        assert to_shape(frame, grown).is_valid


def test_buffer_zero_is_identity():
    sq = rect(0, 0, 100, 100)
    assert buffer_polygon(FRAME, sq, 0) == sq


@pytest.mark.parametrize("d", [0.5, 2.0, 5.97, 25.0])
def test_buffer_area_closed_form(d):
    area = geometry_area(FRAME, buffer_polygon(FRAME, rect(0, 0, 100, 100), d))
    exact = 10_000 + 400 * d + math.pi * d * d
    # chords lie inside the true arcs by at most the arc tolerance
    assert exact - 2 * math.pi * d * ARC_TOLERANCE_M <= area <= exact + 1e-6


def test_buffer_merges_nearby_parts():
    a, b = rect(0, 0, 50, 50), rect(60, 0, 110, 50)
    multi = Geometry("MultiPolygon", a.polygons() + b.polygons())
    grown = buffer_polygon(FRAME, multi, 20)
    assert grown.kind == "Polygon"
    oracle = shapely.union_all([to_shape(FRAME, a).buffer(20, quad_segs=256),
                                to_shape(FRAME, b).buffer(20, quad_segs=256)]).area
    assert geometry_area(FRAME, grown) == pytest.approx(oracle, rel=1e-3)


def test_buffer_rejects_invalid_input():
    bow = Geometry.polygon([xy_ring([(0, 0), (10, 10), (10, 0), (0, 10)])])
    with pytest.raises(Exception):
        buffer_polygon(FRAME, bow, 1)


# --- forbidden region -----------------------------------------------------

def test_no_roads_no_parcels_gives_empty_region():
    layout = UrbanLayout((park("g", 0, 0, 10, 10),))
    assert forbidden_region(FRAME, layout, GrowthSpec(0.1)).is_empty


def test_road_corridor_area():
    layout = UrbanLayout((Feature("r", xy_line([(0, 0), (200, 0)]), {"highway": "service"}),))
    region = forbidden_region(FRAME, layout, GrowthSpec(0.1, road_buffer_m=2.0))
    exact = 4 * 200 + math.pi * 4
    assert geometry_area(FRAME, region) == pytest.approx(exact, abs=2 * math.pi * 2 * ARC_TOLERANCE_M)


def test_absorb_mode_leaves_parking_out_of_forbidden_region():
    layout = UrbanLayout((
        park("g", 0, 0, 50, 50),
        Feature("p", rect(50, 0, 80, 30), {"amenity": "parking"}),
        Feature("b", rect(-40, 0, -10, 30), {"building": "yes"}),
    ))
    absorb = forbidden_region(FRAME, layout, GrowthSpec(0.1, mode="absorb"))
    preserve = forbidden_region(FRAME, layout, GrowthSpec(0.1, mode="preserve"))
    assert geometry_area(FRAME, absorb) == pytest.approx(900, rel=1e-6)  # building only
    assert geometry_area(FRAME, preserve) == pytest.approx(1800, rel=1e-6)


# --- growth ---------------------------------------------------------------

def test_zero_ratio_is_identity():
    greens = {"g": rect(0, 0, 100, 100)}
    res = grow_to_target(FRAME, greens, GrowthSpec(0.0), Geometry.empty())
    assert res.feasible and res.buffer_distance == 0 and res.new_greens == greens


def test_single_square_quarter_growth_distance():
    res = grow_to_target(FRAME, {"g": rect(0, 0, 100, 100)}, GrowthSpec(0.25), Geometry.empty())
    # positive root of pi d^2 + 400 d - 2500 = 0
    root = (-400 + math.sqrt(400 ** 2 + 4 * math.pi * 2500)) / (2 * math.pi)
    assert root == pytest.approx(5.970, abs=1e-3)
    assert res.feasible
    assert abs(res.achieved_delta_area - 2500) / 2500 <= 0.01
    assert res.buffer_distance == pytest.approx(root, rel=0.012)


def test_enclosed_green_is_infeasible(blocked_layout):
    frame = frame_for("polygon", ("all-green",), blocked_layout)
    spec = GrowthSpec(0.2)
    res = grow_to_target(frame, green_polygons(blocked_layout), spec,
                         forbidden_region(frame, blocked_layout, spec))
    assert not res.feasible
    assert res.achieved_delta_area < 0.2 * 10_000 * 0.99


def test_empty_green_set():
    with pytest.raises(EmptyGreenSet):
        grow_to_target(FRAME, {}, GrowthSpec(0.1), Geometry.empty())


def test_feasible_growth_is_valid_and_avoids_forbidden(small_layout):
    frame = frame_for("polygon", ("all-green",), small_layout)
    spec = GrowthSpec(0.3, no_merge=True)
    forbidden = forbidden_region(frame, small_layout, spec)
    res = grow_to_target(frame, green_polygons(small_layout), spec, forbidden)
    assert res.feasible
    fshape = to_shape(frame, forbidden)
    for g in res.new_greens.values():
        assert check_validity(frame, g).valid
        assert to_shape(frame, g).intersection(fshape).area < 1e-6
    assert not res.merged_pairs


def test_absorb_mode_swallows_small_parcel():
    layout = UrbanLayout((
        park("g", 0, 0, 100, 100),
        Feature("p", rect(100, 40, 104, 44), {"amenity": "parking"}),
    ))
    spec = GrowthSpec(0.3, mode="absorb")
    frame = frame_for("polygon", ("all-green",), layout)
    res = grow_to_target(frame, green_polygons(layout), spec,
                         forbidden_region(frame, layout, spec), absorbable_parcels(layout, spec))
    assert res.feasible and res.absorbed_ids == ["p"]


def test_min_separation_examples():
    assert min_separation(FRAME, rect(0, 0, 10, 10), rect(18, 0, 28, 10)) == pytest.approx(8)
    assert min_separation(FRAME, rect(0, 0, 10, 10), rect(5, 5, 15, 15)) == 0


def test_min_separation_of_grown_greens_matches_sampling(small_layout):
    frame = frame_for("polygon", ("all-green",), small_layout)
    spec = GrowthSpec(0.3, spacing_m=8.0)
    res = grow_to_target(frame, green_polygons(small_layout), spec,
                         forbidden_region(frame, small_layout, spec))
    a, b = res.new_greens["way/1"], res.new_greens["way/2"]
    # sample a's boundary every 2 cm and measure exact point-to-segment distance to b
    ring_a = to_shape(frame, a).exterior
    samples = shapely.get_coordinates(shapely.segmentize(ring_a, 0.02))
    bxy = shapely.get_coordinates(to_shape(frame, b).exterior)
    p0, p1 = bxy[:-1], bxy[1:]
    d = p1 - p0
    best = np.inf
    for chunk in np.array_split(samples, max(1, len(samples) // 2000)):
        rel = chunk[:, None, :] - p0[None]
        t = np.clip((rel * d).sum(-1) / (d * d).sum(-1), 0, 1)
        dist = np.hypot(*(rel - t[..., None] * d).transpose(2, 0, 1))
        best = min(best, float(dist.min()))
    assert min_separation(frame, a, b) == pytest.approx(best, abs=0.05)


def test_spacing_report_lists_close_pairs():
    greens = {"a": rect(0, 0, 50, 50), "b": rect(54, 0, 104, 50)}
    res = grow_to_target(FRAME, greens, GrowthSpec(0.0, spacing_m=8.0), Geometry.empty())
    assert [pair for pair, _ in res.soft_violations] == [("a", "b")]


boxes = st.tuples(st.floats(-100, 100), st.floats(-100, 100),
                  st.floats(5, 80), st.floats(5, 80))


@settings(max_examples=60, deadline=None)
@given(boxes, st.lists(boxes, max_size=3), st.floats(0, 40), st.floats(0, 40))
def test_clipped_buffer_area_is_monotone(g, forbidden, d1, d2):
    d1, d2 = sorted((d1, d2))
    x, y, w, h = g
    green = rect(x, y, x + w, y + h)
    fshape = shapely.union_all([to_shape(FRAME, rect(a, b, a + c, b + e)) for a, b, c, e in forbidden]) \
        if forbidden else shapely.Polygon()

    def clipped(d):
        return to_shape(FRAME, buffer_polygon(FRAME, green, d)).difference(fshape).area

    # chord approximation may shift the boundary inward by at most the arc tolerance
    slack = 2 * math.pi * d2 * ARC_TOLERANCE_M
    assert clipped(d1) <= clipped(d2) + slack


def test_fixture_greens_present(patch_layouts):
    for layout in patch_layouts.values():
        greens = [f for f in layout if classify_feature(f).semantic == "green"]
        assert greens
