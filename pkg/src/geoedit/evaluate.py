"""Run labeled tasks end to end and turn the sessions into metric results."""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

from .corpus import LabeledTask
from .errors import GeoEditError, SessionFailed
from .execution import SessionConfig, run_session
from .metrics import TaskResult
from .model import UrbanLayout, load_layout
from .planning import EditPlan, plan, validate_plan


def task_seed(base: int, task_id: str) -> int:
    """Per-task fault seed, stable across processes and task order."""
    return base * 1_000_003 + zlib.crc32(task_id.encode())


@lru_cache(maxsize=64)
def _cached_layout(path: str) -> UrbanLayout:
    return load_layout(path)


def result_from_session(task: LabeledTask, summary, valid: bool, note: str = "") -> TaskResult:
    label = task.label
    inputs = summary.final_metrics_inputs if summary is not None else {}
    retries = sum(summary.retry_stats.values()) if summary is not None else 0
    if task.level == "polygon":
        poly = inputs.get("polygon", {})
        return TaskResult(task.task_id, "polygon", valid,
                          delta_area=poly.get("achieved_delta_area_m2"),
                          target_area=label["target_area_m2"],
                          feasible=poly.get("feasible"), retries=retries, note=note)
    edit = inputs.get(task.level, {}).get("edit_coord")
    return TaskResult(task.task_id, task.level, valid and edit is not None,
                      edit_coord=tuple(edit) if edit else None,
                      label_coord=tuple(label["g_label"]), magnitude=float(label["magnitude_m"]),
                      retries=retries, note=note)


def run_task(task: LabeledTask, layout: UrbanLayout, config: SessionConfig = SessionConfig(),
             edit_plan: EditPlan | None = None, external=None) -> TaskResult:
    cfg = replace(config, seed=task_seed(config.seed, task.task_id))
    try:
        edit_plan = edit_plan or plan(task.instruction, layout, config.planner_backend, external)
    except GeoEditError as exc:
        return TaskResult(task.task_id, task.level, False, note=f"planning: {exc}")
    check = validate_plan(edit_plan, layout)
    if not check.ok:
        return TaskResult(task.task_id, task.level, False,
                          note="plan rejected: " + "; ".join(map(str, check.issues)))
    try:
        _, summary = run_session(layout, edit_plan, cfg)
    except SessionFailed as exc:
        return result_from_session(task, exc.summary, False, note=str(exc))
    return result_from_session(task, summary, True)


def _run_one(args):
    task, layout_path, config = args
    return run_task(task, _cached_layout(layout_path), config)


def resolve_layout(task: LabeledTask, base_dir: str | Path) -> str:
    path = Path(task.layout_ref)
    return str(path if path.is_absolute() else Path(base_dir) / path)


def evaluate_tasks(tasks: list[LabeledTask], base_dir: str | Path = ".",
                   config: SessionConfig = SessionConfig(), workers: int | None = 1
                   ) -> list[TaskResult]:
    jobs = [(t, resolve_layout(t, base_dir), config) for t in tasks]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) < 2:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
