"""How the retry budget buys back validity when tool outputs are unreliable.

Each task is one translate subtask whose result is corrupted with a fixed
probability. Validation catches the corruption and the controller retries,
so the valid fraction approaches 1 - p^(R+1).
"""
import dataclasses

import numpy as np

from geoedit.errors import SessionFailed
from geoedit.execution import FaultSpec, SessionConfig, run_session
from geoedit.model import Feature, Geometry, UrbanLayout
from geoedit.planning import EditPlan, TranslatePoint, build_intent

P_FAULT, TASKS = 0.3, 2000

layout = UrbanLayout((Feature("node/1", Geometry.point(10.0, 45.0), {"amenity": "bench"}),))
rng = np.random.default_rng(0)
plans = []
for _ in range(TASKS):
    intent = build_intent(TranslatePoint("node/1", float(rng.integers(8)) * 45,
                                         float(rng.integers(5, 51))))
    move = dataclasses.replace(intent.subtasks[1], index=1)
    plans.append(EditPlan((dataclasses.replace(intent, subtasks=(move,)),), "", 1.0))

print(f"fault probability {P_FAULT}, {TASKS} tasks")
print(" R   EVR     1-p^(R+1)  mean retries")
for R in range(6):
    valid, retries = 0, 0
    for seed, p in enumerate(plans):
        cfg = SessionConfig(retry_R=R, fault=FaultSpec(P_FAULT), seed=seed, record_timing=False)
        try:
            _, summary = run_session(layout, p, cfg)
            valid += 1
        except SessionFailed as exc:
            summary = exc.summary
        retries += sum(summary.retry_stats.values())
    print(f"{R:2d}   {valid / TASKS:.4f}  {1 - P_FAULT ** (R + 1):.4f}     {retries / TASKS:.3f}")
