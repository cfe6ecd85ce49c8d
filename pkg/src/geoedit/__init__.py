"""Instruction-driven editing of urban map layouts with validated, retried execution."""
from __future__ import annotations

from .errors import GeoEditError, SessionFailed, SubtaskExhausted
from .execution import FaultSpec, SessionConfig, run_session
from .metrics import ace, evr, ree, report
from .model import (
    Feature,
    GeoCoord,
    Geometry,
    UrbanLayout,
    layout_diff,
    load_layout,
    parse_layout,
    save_layout,
    serialize_layout,
)
from .planning import EditPlan, parse_structured, plan, validate_plan
from .render import render_svg
from .validation import ExecutionSummary

__version__ = "0.1.0"


def edit(layout: UrbanLayout, instruction: str, config: SessionConfig = SessionConfig(),
         external=None) -> tuple[UrbanLayout, ExecutionSummary, EditPlan]:
    """Plan ``instruction`` against ``layout`` and execute it.

    Raises :class:`GeoEditError` subclasses for unparseable instructions or
    rejected plans, and :class:`SessionFailed` when a subtask runs out of
    retries.
    """
    edit_plan = plan(instruction, layout, config.planner_backend, external)
    check = validate_plan(edit_plan, layout)
    if not check.ok:
        raise GeoEditError("plan rejected: " + "; ".join(f"{k} {v}" for k, v in check.issues))
    result, summary = run_session(layout, edit_plan, config)
    return result, summary, edit_plan


__all__ = [
    "EditPlan", "ExecutionSummary", "FaultSpec", "Feature", "GeoCoord", "GeoEditError",
    "Geometry", "SessionConfig", "SessionFailed", "SubtaskExhausted", "UrbanLayout",
    "ace", "edit", "evr", "layout_diff", "load_layout", "parse_layout", "parse_structured",
    "plan", "ree", "render_svg", "report", "run_session", "save_layout", "serialize_layout",
    "validate_plan",
]
