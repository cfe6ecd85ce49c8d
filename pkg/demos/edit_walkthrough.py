"""Apply one instruction per level to a fixture patch and draw the result.

Run from the repository root:  python demos/edit_walkthrough.py
Writes walkthrough.svg and walkthrough.geojson into the current directory.
"""
from pathlib import Path

from geoedit import load_layout
from geoedit.execution import SessionConfig, run_session
from geoedit.model import layout_diff, save_layout
from geoedit.planning import plan
from geoedit.render import render_svg

ROOT = Path(__file__).resolve().parent.parent
layout = load_layout(ROOT / "tests/fixtures/layouts/patch_a.geojson")

instructions = [
    "Find the bench (ID: node/10076077087) and shift it approximately 29 meters to the West, "
    "ensuring it remains parallel to the adjacent road to correct its position.",
    "Locate the cycling path (ID: way/1110380855) and shorten its ending point (Tail) "
    "by about 17 meters.",
    "Gradually grow the existing green polygons by increasing the existing green area by "
    "approximately 25%. Merge adjacent or nearby green areas into larger regions, allowing the "
    "expansion to absorb less important parcels when necessary. Keep a buffer of ~2 m from "
    "roads and a separation of ~8 m between green zones.",
]

current = layout
for text in instructions:
    p = plan(text, current)
    print(f"plan: {p.intent_summary}  (confidence {p.confidence:.2f})")
    for intent in p.intents:
        for s in intent.subtasks:
            print(f"  {intent.level:8s} {s.index}. {s.kind:15s} {s.tool}")
    edited, summary = run_session(current, p, SessionConfig())
    diff = layout_diff(current, edited)
    print(f"  modified {diff.modified[:4]}{' ...' if len(diff.modified) > 4 else ''}, "
          f"removed {diff.removed}")
    poly = summary.final_metrics_inputs.get("polygon")
    if poly:
        print(f"  green area +{poly['achieved_delta_area_m2']:.0f} m2 "
              f"(target {poly['target_delta_area_m2']:.0f} m2, "
              f"buffer distance {poly['buffer_distance_m']:.2f} m)")
    current = edited

save_layout(current, "walkthrough.geojson")
Path("walkthrough.svg").write_text(render_svg(layout, current))
print("wrote walkthrough.geojson and walkthrough.svg")
