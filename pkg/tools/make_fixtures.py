"""Generate the synthetic Overpass-style fixture patches used by the tests.

Each patch is a 1 km street grid with parks, buildings, parking lots,
benches, trees and paths, written in the shape Overpass returns for
``out geom``. Some elements carry noise the filter must remove: denylisted
tags, untagged nodes, a way without geometry and exact duplicate ways.

The manifest records, from the generator's own bookkeeping, how many
features survive filtering and which tag keys remain. It is the audit
reference for the filter, so it never calls the filter itself.

    python3 tools/make_fixtures.py            # rewrite tests/fixtures
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "fixtures"
R = 6371008.8

PATCHES = {
    "patch_a": (-73.9857, 40.7484),
    "patch_b": (2.3522, 48.8566),
    "patch_c": (103.8198, 1.3521),
    "patch_d": (151.2093, -33.8688),
    "patch_e": (10.7522, 59.9139),
}
BENCH_ID = 10076077087
CYCLEWAY_ID = 1110380855
NOISE_TAGS = ("created_by", "source", "note", "fixme", "attribution")


class Patch:
    def __init__(self, name: str, center: tuple, seed: int):
        self.name = name
        self.lon0, self.lat0 = center
        self.rng = np.random.default_rng(seed)
        self.elements: list = []
        self.kept = 0
        self.keys: set = set()
        self.next_node = 9_000_000_000 + seed * 100_000
        self.next_way = 900_000_000 + seed * 100_000

    def ll(self, x, y):
        lat = self.lat0 + math.degrees(y / R)
        lon = self.lon0 + math.degrees(x / (R * math.cos(math.radians(self.lat0))))
        return round(lon, 7), round(lat, 7)

    def _noise(self, tags: dict) -> dict:
        if self.rng.random() < 0.3:
            key = NOISE_TAGS[int(self.rng.integers(len(NOISE_TAGS)))]
            tags = dict(tags, **{key: "survey"})
        return tags

    def _count(self, tags: dict):
        self.kept += 1
        self.keys.update(k for k in tags if k not in NOISE_TAGS)

    def node(self, x, y, tags, node_id=None):
        node_id = node_id or self._node_id()
        lon, lat = self.ll(x, y)
        el = {"type": "node", "id": node_id, "lat": lat, "lon": lon}
        if tags:
            el["tags"] = self._noise(tags)
            self._count(tags)
        self.elements.append(el)

    def _node_id(self):
        self.next_node += 1
        return self.next_node

    def way(self, pts, tags, way_id=None, counted=True):
        if way_id is None:
            self.next_way += 1
            way_id = self.next_way
        geom = [dict(zip(("lon", "lat"), self.ll(x, y))) for x, y in pts]
        el = {"type": "way", "id": way_id, "nodes": [self._node_id() for _ in pts],
              "tags": self._noise(tags), "geometry": geom}
        self.elements.append(el)
        if counted:
            self._count(tags)
        return el

    def rect(self, x0, y0, w, h, tags):
        pts = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h), (x0, y0)]
        return self.way(pts, tags)


def build(name: str, center: tuple, seed: int) -> Patch:
    p = Patch(name, center, seed)
    rng = p.rng
    grid = [-400.0, -200.0, 0.0, 200.0, 400.0]
    for i, g in enumerate(grid):
        kind = "primary" if g == 0 else "residential"
        wob = rng.uniform(-3, 3)
        p.way([(g, -500), (g + wob, 0), (g, 500)], {"highway": kind, "name": f"Avenue {i + 1}"})
        p.way([(-500, g), (0, g - wob), (500, g)], {"highway": kind, "name": f"Street {i + 1}"})

    special_bench = name == "patch_a"
    blocks = [(bx, by) for bx in grid[:-1] for by in grid[:-1]]
    for b_index, (bx, by) in enumerate(blocks):
        quads = [(bx + 12, by + 12), (bx + 104, by + 12), (bx + 12, by + 104), (bx + 104, by + 104)]
        order = rng.permutation(4)
        park_q = quads[order[0]] if rng.random() < 0.55 else None
        if park_q is not None:
            w, h = rng.uniform(35, 70), rng.uniform(35, 70)
            x0, y0 = park_q[0] + rng.uniform(4, 80 - w), park_q[1] + rng.uniform(4, 80 - h)
            tag = [{"leisure": "park", "name": f"Park {b_index}"}, {"landuse": "grass"},
                   {"leisure": "garden"}][int(rng.integers(3))]
            if rng.random() < 0.5:
                p.rect(x0, y0, w, h, tag)
            else:
                c = rng.uniform(0.3, 0.6)
                pts = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + c * h), (x0 + c * w, y0 + c * h),
                       (x0 + c * w, y0 + h), (x0, y0 + h), (x0, y0)]
                p.way(pts, tag)
            for _ in range(2):
                bx_, by_ = x0 + rng.uniform(2, w - 2), y0 + rng.uniform(2, h * 0.3)
                if special_bench:
                    p.node(bx_, by_, {"amenity": "bench", "backrest": "yes"}, node_id=BENCH_ID)
                    special_bench = False
                else:
                    p.node(bx_, by_, {"amenity": "bench"})
            p.node(x0 + w / 2, y0 + h / 2, {"natural": "tree"})
        for q in order[1:3]:
            qx, qy = quads[q]
            w, h = rng.uniform(12, 30), rng.uniform(12, 30)
            x0, y0 = qx + rng.uniform(2, 84 - w), qy + rng.uniform(2, 84 - h)
            p.rect(x0, y0, w, h, {"building": ["yes", "residential", "retail"][int(rng.integers(3))],
                                  "building:levels": str(int(rng.integers(1, 8)))})
        if rng.random() < 0.35:
            qx, qy = quads[order[3]]
            p.rect(qx + 6, qy + 6, rng.uniform(20, 40), rng.uniform(15, 30),
                   {"amenity": "parking", "surface": "asphalt"})
        if rng.random() < 0.5:
            p.node(bx + rng.uniform(20, 180), by + 6, {"highway": "street_lamp"})

    # paths inside blocks
    n_paths = 9
    for k in range(n_paths):
        bx, by = blocks[int(rng.integers(len(blocks)))]
        n = int(rng.integers(3, 6))
        xs = np.linspace(bx + 30, bx + 170, n) + rng.uniform(-5, 5, n)
        ys = by + 100 + np.cumsum(rng.uniform(-20, 20, n))
        pts = list(zip(xs.round(3), ys.round(3)))
        kind = "cycleway" if k < 3 else "footway"
        wid = CYCLEWAY_ID if (name == "patch_a" and k == 0) else None
        p.way(pts, {"highway": kind, "surface": "paved"}, way_id=wid)

    # noise the filter must remove
    for _ in range(6):
        p.node(rng.uniform(-480, 480), rng.uniform(-480, 480), None)
    p.elements.append({"type": "way", "id": p.next_way + 50, "nodes": [1, 2],
                       "tags": {"highway": "service"}})
    p.elements.append({"type": "relation", "id": 77_000 + seed,
                       "members": [], "tags": {"type": "route", "route": "bus"}})
    dup = next(e for e in p.elements if e["type"] == "way" and "building" in e["tags"])
    p.elements.append(dict(dup, id=p.next_way + 60))
    return p


def main(argv=None) -> int:
    raw_dir = OUT / "overpass"
    raw_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for seed, (name, center) in enumerate(sorted(PATCHES.items())):
        p = build(name, center, seed)
        doc = {"version": 0.6, "generator": "geoedit fixture builder",
               "osm3s": {"copyright": "synthetic data"}, "elements": p.elements}
        (raw_dir / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n", "utf-8")
        manifest[name] = {"center": list(center), "feature_count": p.kept,
                          "tag_keys": sorted(p.keys)}
    (OUT / "patch_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             "utf-8")
    layouts = OUT / "layouts"
    layouts.mkdir(exist_ok=True)
    sys.path.insert(0, str(ROOT / "src"))
    from geoedit.corpus import filter_patch
    from geoedit.model import save_layout
    for name in sorted(PATCHES):
        layout = filter_patch((raw_dir / f"{name}.json").read_text("utf-8"))
        save_layout(layout, layouts / f"{name}.geojson")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
