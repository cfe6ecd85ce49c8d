"""Filter a stored Overpass response, generate labeled tasks, and score the engine on them."""
from pathlib import Path

from geoedit.corpus import fetch_patch, filter_patch, gen_tasks, perturb_instruction
from geoedit.evaluate import run_task
from geoedit.metrics import report

ROOT = Path(__file__).resolve().parent.parent
raw = fetch_patch(source="fixture", fixture=ROOT / "tests/fixtures/overpass/patch_b.json")
layout = filter_patch(raw)
print(f"patch_b: {len(layout)} features after filtering")

tasks = []
for level, count in (("point", 30), ("line", 30), ("polygon", 10)):
    tasks += gen_tasks(layout, level, count, seed=1, layout_ref="patch_b")

sample = tasks[0]
print("\nsample task:", sample.instruction)
print("label:", sample.label)
print("noisy variant:", perturb_instruction(sample, 3))

results = [run_task(t, layout) for t in tasks]
print()
print(report(results).to_text(), end="")
