import json
import os

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from geoedit.corpus import (
    FilterConfig,
    LabeledTask,
    PatchSpec,
    destination,
    eligible,
    fetch_patch,
    filter_patch,
    gen_tasks,
    haversine_m,
    patch_bbox,
    perturb_instruction,
    read_manifest,
    write_manifest,
)
from geoedit.errors import (
    InsufficientFeatures,
    MalformedResponse,
    NetworkError,
    PoleProximity,
    RateLimited,
    Rejected,
)
from geoedit.geometry import translate_point
from geoedit.model import Feature, GeoCoord, Geometry, UrbanLayout, load_layout
from geoedit.planning import parse_structured
from geoedit.projection import make_frame

from conftest import BENCH_ID, LAYOUTS, OVERPASS, PATCHES

PATCH_B = load_layout(LAYOUTS / "patch_b.geojson")


class FakeResponse:
    def __init__(self, status=200, text="", headers=None):
        self.status_code = status
        self.text = text
        self.headers = headers or {}


class FakeHTTP:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, data=None, timeout=None):
        self.posts.append((url, data))
        item = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(item, Exception):
            raise item
        return item


def element(i, lon, lat, tags=None):
    return {"type": "node", "id": i, "lat": lat, "lon": lon,
            "tags": {"amenity": "bench"} if tags is None else tags}


# --- patches --------------------------------------------------------------

@pytest.mark.parametrize("lat", [0.0, 40.0, 60.0, -33.9])
def test_bbox_sides_match_haversine(lat):
    lo, hi = patch_bbox(PatchSpec(GeoCoord(10.0, lat)))
    south = haversine_m((lo.lon, lo.lat), (hi.lon, lo.lat))
    north = haversine_m((lo.lon, hi.lat), (hi.lon, hi.lat))
    west = haversine_m((lo.lon, lo.lat), (lo.lon, hi.lat))
    for side in (south, north, west):
        assert side == pytest.approx(1000.0, rel=0.005)
    assert (lo.lon + hi.lon) / 2 == pytest.approx(10.0)
    assert (lo.lat + hi.lat) / 2 == pytest.approx(lat)


def test_bbox_extents():
    lo, hi = patch_bbox(PatchSpec(GeoCoord(0, 0)))
    assert hi.lat - lo.lat == pytest.approx(0.0089932, abs=1e-7)
    assert hi.lon - lo.lon == pytest.approx(0.0089932, abs=1e-7)
    lo, hi = patch_bbox(PatchSpec(GeoCoord(0, 40)))
    assert hi.lon - lo.lon == pytest.approx(0.0117, abs=1e-4)


def test_bbox_near_pole_and_zero_size():
    with pytest.raises(PoleProximity):
        patch_bbox(PatchSpec(GeoCoord(0, 86)))
    with pytest.raises(ValueError):
        PatchSpec(GeoCoord(0, 0), 0)


def test_fixture_fetch_is_verbatim():
    path = OVERPASS / "patch_a.json"
    assert fetch_patch(source="fixture", fixture=path).encode("utf-8") == path.read_bytes()


def test_unreachable_endpoint_backs_off_three_times():
    pauses = []
    http = FakeHTTP(requests.ConnectionError("refused"))
    with pytest.raises(NetworkError):
        fetch_patch(PatchSpec(GeoCoord(10, 45)), http=http, url="http://x.invalid",
                    backoff_s=0.001, sleep=pauses.append)
    assert len(http.posts) == 4
    assert pauses == [0.001, 0.002, 0.004]


def test_rate_limit_respects_retry_after():
    pauses = []
    http = FakeHTTP(FakeResponse(429, headers={"Retry-After": "7"}))
    with pytest.raises(RateLimited) as info:
        fetch_patch(PatchSpec(GeoCoord(10, 45)), http=http, url="http://x.invalid",
                    backoff_s=0.001, sleep=pauses.append)
    assert info.value.retry_after == 7.0
    assert pauses[0] >= 7.0


def test_rate_limit_then_success():
    body = json.dumps({"elements": []})
    http = FakeHTTP(FakeResponse(429), FakeResponse(200, body))
    assert fetch_patch(PatchSpec(GeoCoord(10, 45)), http=http, url="http://x.invalid",
                       backoff_s=0.001, sleep=lambda s: None) == body


@pytest.mark.parametrize("text", ["<html>busy</html>", json.dumps({"remark": "no elements"})])
def test_malformed_response(text):
    http = FakeHTTP(FakeResponse(200, text))
    with pytest.raises(MalformedResponse):
        fetch_patch(PatchSpec(GeoCoord(10, 45)), http=http, url="http://x.invalid",
                    sleep=lambda s: None)


def test_query_covers_the_bbox():
    http = FakeHTTP(FakeResponse(200, json.dumps({"elements": []})))
    spec = PatchSpec(GeoCoord(10, 45))
    fetch_patch(spec, http=http, url="http://x.invalid")
    query = http.posts[0][1]["data"]
    lo, hi = patch_bbox(spec)
    assert f"{lo.lat:.7f},{lo.lon:.7f},{hi.lat:.7f},{hi.lon:.7f}" in query
    assert "out geom" in query


def test_cache_short_circuits_the_network(tmp_path):
    body = json.dumps({"elements": []})
    spec = PatchSpec(GeoCoord(10, 45))
    fetch_patch(spec, http=FakeHTTP(FakeResponse(200, body)), url="http://x.invalid",
                cache_dir=tmp_path)
    dead = FakeHTTP(requests.ConnectionError("offline"))
    assert fetch_patch(spec, http=dead, url="http://x.invalid", cache_dir=tmp_path) == body
    assert dead.posts == []


# --- filtering ------------------------------------------------------------

def test_low_density_patch_is_rejected():
    doc = {"elements": [element(i, 10 + i * 1e-4, 45) for i in range(5)]}
    with pytest.raises(Rejected) as info:
        filter_patch(doc)
    assert info.value.reason == "low_density"
    assert len(filter_patch(doc, FilterConfig(min_feature_count=5))) == 5


def test_empty_patch_is_rejected():
    doc = {"elements": [element(1, 10, 45, tags={"source": "survey"}),
                        {"type": "node", "id": 2, "tags": {"amenity": "bench"}}]}
    with pytest.raises(Rejected) as info:
        filter_patch(doc)
    assert info.value.reason == "empty"


def test_duplicate_polygons_leave_one_survivor():
    ring = [{"lon": 10 + dx, "lat": 45 + dy}
            for dx, dy in ((0, 0), (1e-3, 0), (1e-3, 1e-3), (0, 1e-3), (0, 0))]
    doc = {"elements": [
        {"type": "way", "id": 1, "tags": {"leisure": "park"}, "geometry": ring},
        {"type": "way", "id": 2, "tags": {"leisure": "garden"}, "geometry": ring},
    ]}
    layout = filter_patch(doc, FilterConfig(min_feature_count=1))
    assert layout.ids == ["way/1"]
    both = filter_patch(doc, FilterConfig(min_feature_count=1, drop_overlapping=False))
    assert len(both) == 2


def test_denylisted_tags_are_stripped():
    doc = {"elements": [element(1, 10, 45, tags={"amenity": "bench", "created_by": "JOSM",
                                                 "fixme": "check"})]}
    layout = filter_patch(doc, FilterConfig(min_feature_count=1))
    assert layout.get("node/1").properties == {"amenity": "bench"}


@pytest.mark.parametrize("name", PATCHES)
def test_fixture_patches_match_manifest(name, patch_manifest, patch_layouts):
    layout = filter_patch(fetch_patch(source="fixture", fixture=OVERPASS / f"{name}.json"))
    entry = patch_manifest[name]
    assert len(layout) == entry["feature_count"]
    assert sorted({k for f in layout for k in f.properties}) == entry["tag_keys"]
    assert layout.digest == patch_layouts[name].digest


# --- task generation ------------------------------------------------------

@pytest.mark.parametrize("level", ["point", "line", "polygon"])
def test_generation_is_deterministic(patch_a, level, tmp_path):
    a = gen_tasks(patch_a, level, 12, seed=4, layout_ref="patch_a")
    b = gen_tasks(patch_a, level, 12, seed=4, layout_ref="patch_a")
    assert a == b
    write_manifest(a, tmp_path / "a.jsonl")
    write_manifest(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_manifest(tmp_path / "a.jsonl") == a
    assert gen_tasks(patch_a, level, 12, seed=5) != a


def test_sampling_ranges(patch_layouts):
    for layout in patch_layouts.values():
        for t in gen_tasks(layout, "point", 40, seed=1):
            assert 5 <= t.label["magnitude_m"] <= 50 and t.label["bearing"] % 45 == 0
        for t in gen_tasks(layout, "line", 40, seed=1):
            lab = t.label
            assert 5 <= abs(lab["delta_m"]) <= 30 or lab["delta_m"] < 0
            assert abs(lab["delta_m"]) <= 30 and lab["end"] in ("head", "tail")
            if lab["delta_m"] < 0:
                assert -lab["delta_m"] <= 0.4 * lab["length_m"]
        for t in gen_tasks(layout, "polygon", 40, seed=1):
            assert 0.10 <= t.label["target_ratio"] <= 0.50
            assert t.label["mode"] in ("preserve", "absorb")


def test_point_template_reproduces_published_wording(patch_a):
    bench = patch_a.get(BENCH_ID)
    layout = UrbanLayout((bench,))
    text = None
    for seed in range(20_000):
        t = gen_tasks(layout, "point", 1, seed=seed)[0]
        if (t.template, t.label["bearing"], t.label["magnitude_m"]) == (0, 270, 29):
            text = t.instruction
            break
    assert text == ("Find the bench (ID: node/10076077087) and shift it approximately 29 meters "
                    "to the West, ensuring it remains aligned with its surroundings to correct "
                    "its position.")


def test_no_greens_is_insufficient(small_layout):
    bare = UrbanLayout(tuple(f for f in small_layout if f.properties.get("leisure") != "park"))
    with pytest.raises(InsufficientFeatures):
        gen_tasks(bare, "polygon", 3, seed=0)
    with pytest.raises(InsufficientFeatures):
        gen_tasks(UrbanLayout(()), "point", 3, seed=0)


def test_short_lines_are_not_eligible(small_layout):
    # the footway is about 90 m, the residential road 350 m
    assert {f.id for f in eligible(small_layout, "line")} == {"way/3", "way/5"}
    tiny = UrbanLayout((Feature("way/9", Geometry.line([(10, 45), (10.0001, 45)]),
                                {"highway": "path"}),))
    assert eligible(tiny, "line") == []


@pytest.mark.parametrize("name", PATCHES)
def test_labels_are_independent_of_the_engine(patch_layouts, name):
    layout = patch_layouts[name]
    for t in gen_tasks(layout, "point", 20, seed=8):
        origin = layout.get(t.label["id"]).geometry.coordinates
        frame = make_frame(GeoCoord(*origin))
        moved = translate_point(frame, GeoCoord(*origin), t.label["bearing"], 50.0)
        oracle = destination(origin, t.label["bearing"], 50.0)
        assert haversine_m((moved.lon, moved.lat), oracle) < 1e-3


@pytest.mark.parametrize("level", ["point", "line", "polygon"])
def test_every_generated_instruction_parses(patch_layouts, level):
    for name, layout in patch_layouts.items():
        for t in gen_tasks(layout, level, 20, seed=3, layout_ref=name):
            goal = parse_structured(t.instruction, layout).intents[0].goal
            for variant in range(1, 6):
                again = parse_structured(perturb_instruction(t, variant), layout)
                assert again.intents[0].goal == goal


def test_identity_variant_and_padding(patch_a):
    t = gen_tasks(patch_a, "point", 1, seed=0)[0]
    assert perturb_instruction(t, 0) == t.instruction
    variants = {perturb_instruction(t, v) for v in range(1, 30)}
    assert len(variants) > 5
    assert any(not v.startswith(t.instruction[:4]) for v in variants)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10_000))
def test_perturbation_preserves_the_goal(seed, variant):
    layout = PATCH_B
    for level in ("point", "line", "polygon"):
        t = gen_tasks(layout, level, 1, seed=seed)[0]
        assert (parse_structured(perturb_instruction(t, variant), layout).intents[0].goal
                == parse_structured(t.instruction, layout).intents[0].goal)


def test_task_records_round_trip():
    t = LabeledTask("x", "point", "text", "patch_a.geojson", {"id": "node/1"}, 2)
    assert LabeledTask.from_record(json.loads(json.dumps(t.to_record()))) == t


@pytest.mark.network
@pytest.mark.skipif(not os.environ.get("GEOEDIT_LIVE"),
                    reason="set GEOEDIT_LIVE=1 to query the public endpoint")
def test_live_patch_is_inside_its_bbox():
    spec = PatchSpec(GeoCoord(2.3522, 48.8566), 300)
    layout = filter_patch(fetch_patch(spec), FilterConfig(min_feature_count=1))
    lo, hi = patch_bbox(spec)
    pad = 0.01
    assert len(layout) > 0
    nodes = [f for f in layout if f.geometry.kind == "Point"]
    for f in nodes:
        lon, lat = f.geometry.coordinates
        assert lo.lon - pad <= lon <= hi.lon + pad and lo.lat - pad <= lat <= hi.lat + pad
