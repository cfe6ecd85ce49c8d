import json
from pathlib import Path

import pytest

from geoedit.model import Feature, GeoCoord, Geometry, UrbanLayout, load_layout
from geoedit.projection import make_frame

FIXTURES = Path(__file__).parent / "fixtures"
LAYOUTS = FIXTURES / "layouts"
OVERPASS = FIXTURES / "overpass"
PATCHES = ("patch_a", "patch_b", "patch_c", "patch_d", "patch_e")

# Bench and cycleway on patch_a that carry the published example ids.
BENCH_ID = "node/10076077087"
CYCLEWAY_ID = "way/1110380855"

ORIGIN = GeoCoord(10.0, 45.0)
FRAME = make_frame(ORIGIN)


def xy_ring(pts):
    """Closed lon/lat ring from planar (x, y) meters around ORIGIN."""
    ring = [FRAME.to_lonlat(x, y) for x, y in pts]
    return tuple(ring) + (ring[0],)


def rect(x0, y0, x1, y1, holes=()):
    rings = [xy_ring([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])]
    rings += [xy_ring(h) for h in holes]
    return Geometry.polygon(rings)


def xy_line(pts):
    return Geometry.line([FRAME.to_lonlat(x, y) for x, y in pts])


def xy_point(x, y):
    return Geometry.point(*FRAME.to_lonlat(x, y))


def park(fid, x0, y0, x1, y1):
    return Feature(fid, rect(x0, y0, x1, y1), {"leisure": "park"})


@pytest.fixture(scope="session")
def patch_layouts():
    return {name: load_layout(LAYOUTS / f"{name}.geojson") for name in PATCHES}


@pytest.fixture(scope="session")
def patch_a(patch_layouts):
    return patch_layouts["patch_a"]


@pytest.fixture(scope="session")
def patch_manifest():
    return json.loads((FIXTURES / "patch_manifest.json").read_text())


@pytest.fixture
def small_layout():
    """Two parks, a road, a building, a path and a bench in a 300 m square."""
    return UrbanLayout((
        park("way/1", 0, 0, 100, 100),
        park("way/2", 150, 0, 230, 80),
        Feature("way/3", xy_line([(-50, -20), (300, -20)]), {"highway": "residential"}),
        Feature("way/4", rect(0, 120, 60, 170), {"building": "yes"}),
        Feature("way/5", xy_line([(0, 200), (40, 200), (80, 230)]), {"highway": "footway"}),
        Feature("node/6", xy_point(120, 150), {"amenity": "bench"}),
    ))


@pytest.fixture
def blocked_layout():
    """A park wrapped tightly in a building ring: it cannot grow at all."""
    ring_outer = [(-20, -20), (120, -20), (120, 120), (-20, 120)]
    ring_inner = [(0, 0), (0, 100), (100, 100), (100, 0)]
    building = Geometry.polygon([xy_ring(ring_outer), xy_ring(ring_inner)])
    return UrbanLayout((
        park("way/10", 0, 0, 100, 100),
        Feature("way/11", building, {"building": "yes"}),
        Feature("node/12", xy_point(200, 200), {"amenity": "bench"}),
    ))


# One line per acceptance criterion, printed after the run.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
