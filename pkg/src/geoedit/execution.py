"""Staged execution: polygon, then line, then point, one subtask at a time.

Each subtask goes through the tool registry, optionally through a seeded
fault injector, then through the validator. Only accepted outcomes are
committed; the stage output is the layout after its last accepted subtask
and feeds the next stage.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SessionFailed, SubtaskExhausted, ToolError
from .model import DEFAULT_TAXONOMY, Geometry, Taxonomy, UrbanLayout
from .planning import LEVELS, EditIntent, EditPlan, Subtask
from .projection import PlanarFrame
from .tools import Observation, Outcome, ToolContext, frame_for, get_tool, green_polygons
from .validation import (
    AttemptRecord,
    ExecutionSummary,
    RetryBudget,
    ValidationDecision,
    aggregate,
    retry_loop,
    tool_error_decision,
    validate_outcome,
)


@dataclass
class ExecutionState:
    current_layout: UrbanLayout
    level: str
    subtask_index: int
    frame: PlanarFrame
    context: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    taxonomy: Taxonomy = DEFAULT_TAXONOMY


def execute_subtask(subtask: Subtask, state: ExecutionState) -> Outcome:
    tool = get_tool(subtask.tool)
    if tool.kind != subtask.kind:
        raise ToolError(f"{subtask.tool} is {tool.kind}, subtask declares {subtask.kind}")
    ctx = ToolContext(state.current_layout, state.frame, subtask.arguments,
                      state.context, state.taxonomy)
    if tool.kind == "informational":
        payload = tool.fn(ctx)
        obs = Observation(subtask.index, subtask.tool, payload)
        return Outcome(obs, state.current_layout, f"{subtask.tool} -> {obs.digest}")
    layout, details = tool.fn(ctx)
    return Outcome(None, layout, f"{subtask.tool} committed candidate {layout.digest[:12]}",
                   details)


# ---------------------------------------------------------------------------
# fault injection
# ---------------------------------------------------------------------------

PRIMARY_FIELD = {
    "measure_length": "length_m",
    "inventory_greens": "total_area_m2",
    "build_forbidden": "area_m2",
    "spacing_report": "violation_count",
}


@dataclass(frozen=True)
class FaultSpec:
    probability: float = 0.0
    jitter_m: tuple = (0.5, 5.0)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("fault probability must lie in [0, 1]")


class FaultInjector:
    """Corrupts outcomes between executor and validator.

    Whether an attempt is corrupted and how are drawn from two separate
    streams, so the decision sequence for a seed can be replayed on its
    own: attempt ``i`` is faulted iff ``default_rng([seed, 0]).random(i+1)[i] < p``.
    """

    def __init__(self, spec: FaultSpec, seed: int):
        self.spec = spec
        self.decide = np.random.default_rng([seed, 0])
        self.params = np.random.default_rng([seed, 1])

    def should_fault(self) -> bool:
        return bool(self.decide.random() < self.spec.probability)

    def _jitter(self, frame: PlanarFrame, lon: float, lat: float) -> tuple[float, float]:
        lo, hi = self.spec.jitter_m
        r = self.params.uniform(lo, hi)
        theta = self.params.uniform(0.0, 2.0 * math.pi)
        x, y = frame.to_xy(lon, lat)
        return frame.to_lonlat(x + r * math.cos(theta), y + r * math.sin(theta))

    def corrupt(self, subtask: Subtask, state: ExecutionState, outcome: Outcome) -> Outcome:
        if outcome.observation is not None:
            payload = dict(outcome.observation.payload)
            if "lon" in payload:
                payload["lon"], payload["lat"] = self._jitter(state.frame, payload["lon"],
                                                              payload["lat"])
            else:
                key = PRIMARY_FIELD[subtask.tool]
                v = float(payload[key] or 0.0)
                sign = 1.0 if self.params.random() < 0.5 else -1.0
                payload[key] = v + sign * self.params.uniform(0.05, 0.5) * max(abs(v), 1.0)
            obs = replace(outcome.observation, payload=payload)
            return replace(outcome, observation=obs)

        before, after = state.current_layout, outcome.next_layout
        if subtask.tool == "grow":
            greens = green_polygons(after, state.taxonomy)
            changed = [gid for gid in greens if before.get(gid) != after.get(gid)] or sorted(greens)
            if not changed:
                return outcome
            gid = changed[int(self.params.integers(len(changed)))]
            lons, lats = zip(*greens[gid].iter_coords())
            x0, x1, y0, y1 = min(lons), max(lons), min(lats), max(lats)
            bowtie = Geometry.polygon([[(x0, y0), (x1, y1), (x1, y0), (x0, y1), (x0, y0)]])
            layout = after.replace(after.get(gid).with_geometry(bowtie))
        else:
            fid = subtask.arguments["id"]
            f = after.get(fid)
            if f.geometry.kind == "Point":
                geom = Geometry.point(*self._jitter(state.frame, *f.geometry.coordinates))
            else:
                coords = list(f.geometry.coordinates)
                i = -1 if subtask.arguments.get("end") == "tail" else 0
                coords[i] = self._jitter(state.frame, *coords[i])
                geom = Geometry.line(coords)
            layout = after.replace(f.with_geometry(geom))
        return replace(outcome, next_layout=layout, tool_log=outcome.tool_log + " [corrupted]")


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionConfig:
    retry_R: int = 3
    planner_backend: str = "grammar"
    fault: FaultSpec | None = None
    seed: int = 0
    record_timing: bool = True
    taxonomy: Taxonomy = DEFAULT_TAXONOMY

    def __post_init__(self):
        if self.retry_R < 0:
            raise ValueError("retry_R must be non-negative")
        if self.planner_backend not in ("grammar", "external"):
            raise ValueError(f"unknown planner backend {self.planner_backend!r}")


class Controller:
    """Runs subtasks through fault injection, validation and bounded retries."""

    def __init__(self, config: SessionConfig, total_subtasks: int):
        self.config = config
        self.summary = ExecutionSummary()
        self.injector = (FaultInjector(config.fault, config.seed)
                         if config.fault is not None and config.fault.probability > 0 else None)
        self.session_cap = config.retry_R * total_subtasks
        self.session_used = 0
        self.committed: list = []

    def _clock(self) -> float:
        return time.perf_counter() if self.config.record_timing else 0.0

    def run_subtask(self, intent: EditIntent, subtask: Subtask, state: ExecutionState) -> Outcome:
        budget = RetryBudget(self.config.retry_R)
        before = state.current_layout

        def attempt(retries_used: int):
            start = self._clock()
            faulted = False
            try:
                outcome = execute_subtask(subtask, state)
                if self.injector is not None and self.injector.should_fault():
                    outcome = self.injector.corrupt(subtask, state, outcome)
                    faulted = True
                decision = validate_outcome(intent, subtask, before, outcome, state.taxonomy)
            except ToolError as exc:
                outcome, decision = None, tool_error_decision(exc)
            wall = round((self._clock() - start) * 1000.0, 3)
            rec = AttemptRecord(
                level=intent.level, k=subtask.index, tool=subtask.tool, kind=subtask.kind,
                decision=decision.verdict, retries_used=retries_used, wall_ms=wall,
                observation_digest=(outcome.observation.digest
                                    if outcome is not None and outcome.observation else None),
                failed_checks=decision.failed, faulted=faulted,
                layout_digest=outcome.next_layout.digest if outcome is not None else "",
                details=outcome.details if outcome is not None else {},
            )
            self.summary.attempts.append(rec)
            if outcome is not None and decision.accepted:
                self.committed.append((rec, outcome.next_layout))
                self.summary.commits.append({"level": rec.level, "k": rec.k,
                                             "digest": rec.layout_digest})
            return outcome, decision

        def on_reject(decision: ValidationDecision, _):
            state.diagnostics.extend(decision.diagnostic)
            if self.session_used >= self.session_cap:
                budget.used = budget.R
            else:
                self.session_used += 1

        outcome, _ = retry_loop(attempt, budget, on_reject)
        return outcome


def execute_stage(level: str, intent: EditIntent, layout: UrbanLayout,
                  controller: Controller) -> UrbanLayout:
    if intent.level != level:
        raise ValueError(f"intent is for {intent.level}, stage is {level}")
    state = ExecutionState(layout, level, 1, frame_for(level, intent.scope, layout),
                           taxonomy=controller.config.taxonomy)
    for subtask in sorted(intent.subtasks, key=lambda s: s.index):
        state.subtask_index = subtask.index
        outcome = controller.run_subtask(intent, subtask, state)
        if outcome.observation is not None:
            state.context.append(outcome.observation)
        else:
            state.current_layout = outcome.next_layout
    return state.current_layout


def _metrics_inputs(plan: EditPlan, summary: ExecutionSummary) -> dict:
    out: dict = {}
    for rec in summary.attempts:
        if rec.kind != "state_updating":
            continue
        if rec.tool == "grow":
            out["polygon"] = {k: rec.details.get(k) for k in (
                "feasible", "achieved_delta_area_m2", "target_delta_area_m2",
                "buffer_distance_m", "spacing_relaxed", "soft_violations")}
            out["polygon"]["accepted"] = rec.decision == "accept"
        elif "edit_coord" in rec.details and rec.decision == "accept":
            out[rec.level] = {"edit_coord": rec.details["edit_coord"]}
    return out


def run_session(layout: UrbanLayout, plan: EditPlan,
                config: SessionConfig = SessionConfig()) -> tuple[UrbanLayout, ExecutionSummary]:
    """Execute a validated plan; raises SessionFailed (with layout and summary) on exhaustion."""
    total = sum(len(i.subtasks) for i in plan.intents)
    controller = Controller(config, total)
    summary = controller.summary
    start = time.perf_counter()
    current = layout
    failure = None
    for level in LEVELS:
        intent = plan.intent(level)
        if intent is None:
            summary.trace.append({"level": level, "note": "skipped: no intent at this level"})
            continue
        summary.trace.append({"level": level, "note": f"{len(intent.subtasks)} subtasks"})
        try:
            current = execute_stage(level, intent, current, controller)
        except SubtaskExhausted as exc:
            failure = f"SubtaskExhausted at {level}: {exc}"
            summary.trace.append({"level": level, "note": failure})
            break
    final = aggregate(layout, summary.attempts, controller.committed)
    summary.final_metrics_inputs = _metrics_inputs(plan, summary)
    summary.wall_time_s = round(time.perf_counter() - start, 6) if config.record_timing else 0.0
    summary.failure = failure
    summary.valid = failure is None
    if failure is not None:
        raise SessionFailed(failure, layout=final, summary=summary)
    return final, summary
