"""Outcome validation, bounded re-execution and the execution summary.

The validator is pure: it recomputes what it needs from the ``before``
layout and never touches the executor's state. Every rejection carries
structured diagnostics of the form ``{failed_check, expected, observed}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import shapely
from shapely.geometry import LineString

from .errors import SubtaskExhausted, ToolError
from .geometry import (
    GrowthSpec,
    bearing_vector,
    check_validity,
    road_shapes,
    to_shape,
)
from .model import DEFAULT_TAXONOMY, Taxonomy, UrbanLayout, classify_feature, layout_diff
from .planning import EditIntent, Subtask
from .projection import PlanarFrame
from .tools import REGISTRY, Outcome, ToolContext, frame_for, green_polygons

COORD_TOL_M = 0.05
NUMERIC_TOL_REL = 0.01
AREA_EPS_M2 = 1e-6


def magnitude_band(magnitude: float) -> float:
    return max(0.01 * abs(magnitude), 0.5)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationDecision:
    verdict: str  # accept | reject
    checks: tuple
    diagnostic: tuple = ()

    def __post_init__(self):
        if self.verdict == "reject" and all(c.passed for c in self.checks):
            raise ValueError("a rejection needs at least one failed check")

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


class _Checks:
    def __init__(self):
        self.checks: list[Check] = []
        self.diag: list[dict] = []

    def add(self, name, passed, detail="", expected=None, observed=None):
        self.checks.append(Check(name, bool(passed), detail))
        if not passed:
            self.diag.append({"failed_check": name, "expected": expected,
                              "observed": observed if observed is not None else detail})

    def decision(self) -> ValidationDecision:
        ok = all(c.passed for c in self.checks)
        return ValidationDecision("accept" if ok else "reject", tuple(self.checks),
                                  tuple(self.diag))


# ---------------------------------------------------------------------------
# informational outcomes
# ---------------------------------------------------------------------------

def _numbers_agree(expected, observed) -> bool:
    if isinstance(expected, bool) or not isinstance(expected, (int, float)):
        return expected == observed
    if isinstance(observed, bool) or not isinstance(observed, (int, float)):
        return False
    if not math.isfinite(observed):
        return False
    return abs(observed - expected) <= NUMERIC_TOL_REL * max(abs(expected), 1.0)


def _payload_mismatches(frame: PlanarFrame, expected: dict, observed: dict) -> list[str]:
    bad = []
    if set(expected) != set(observed):
        return [f"fields {sorted(observed)} != {sorted(expected)}"]
    if "lon" in expected and "lat" in expected:
        try:
            ex, ey = frame.to_xy(expected["lon"], expected["lat"])
            ox, oy = frame.to_xy(observed["lon"], observed["lat"])
            gap = math.hypot(ox - ex, oy - ey)
        except TypeError:
            gap = math.inf
        if not gap <= COORD_TOL_M:
            bad.append(f"location off by {gap:.3f} m")
    for key, want in expected.items():
        if key in ("lon", "lat"):
            continue
        got = observed[key]
        if isinstance(want, list):
            same = isinstance(got, list) and len(got) == len(want) and all(
                _numbers_agree(w, g) if not isinstance(w, list)
                else w[:2] == g[:2] and _numbers_agree(w[2], g[2])
                for w, g in zip(want, got))
        elif want is None:
            same = got is None
        else:
            same = _numbers_agree(want, got)
        if not same:
            bad.append(f"{key}: reported {got!r}, recomputed {want!r}")
    return bad


def _validate_informational(intent, subtask, before, outcome, frame, taxonomy, out: _Checks):
    out.add("state_unchanged", outcome.next_layout == before,
            "informational subtask changed the layout")
    obs = outcome.observation
    if obs is None:
        out.add("observation_consistency", False, "no observation reported")
        return
    tool = REGISTRY[subtask.tool]
    expected = tool.fn(ToolContext(before, frame, subtask.arguments, [], taxonomy))
    bad = _payload_mismatches(frame, expected, obs.payload)
    out.add("observation_consistency", not bad, "; ".join(bad),
            expected=expected, observed=obs.payload)
    if intent.scope and subtask.tool in ("locate", "measure_length"):
        out.add("scope", obs.payload.get("id") == intent.scope[0],
                f"observed {obs.payload.get('id')!r}, intent targets {intent.scope[0]!r}")


# ---------------------------------------------------------------------------
# state-updating outcomes
# ---------------------------------------------------------------------------

def _check_point(intent, before, after, frame, out: _Checks):
    goal = intent.goal
    band = magnitude_band(goal.dist_m)
    a, b = before.get(goal.id), after.get(goal.id)
    if a is None or b is None or b.geometry.kind != "Point":
        out.add("magnitude_band", False, f"{goal.id} missing or not a point after the edit")
        return
    x0, y0 = frame.to_xy(*a.geometry.coordinates)
    x1, y1 = frame.to_xy(*b.geometry.coordinates)
    ux, uy = bearing_vector(goal.bearing)
    err = math.hypot(x1 - x0 - goal.dist_m * ux, y1 - y0 - goal.dist_m * uy)
    moved = math.hypot(x1 - x0, y1 - y0)
    out.add("magnitude_band", err <= band,
            f"displacement {moved:.3f} m, off the instructed vector by {err:.3f} m (band {band:.3f})",
            expected={"dist_m": goal.dist_m, "bearing": goal.bearing},
            observed={"dist_m": round(moved, 4), "vector_error_m": round(err, 4)})


def expected_line_tip(frame: PlanarFrame, coords, end: str, delta_m: float) -> tuple[float, float]:
    """Where the adjusted end should land, from shapely interpolation of the original."""
    xy = frame.project_array(coords)
    line = LineString(xy)
    if delta_m < 0:
        s = -delta_m
        p = line.interpolate(line.length - s if end == "tail" else s)
        return p.x, p.y
    if end == "tail":
        p, q = xy[-1], xy[-2]
    else:
        p, q = xy[0], xy[1]
    dx, dy = p - q
    norm = math.hypot(dx, dy)
    return p[0] + delta_m * dx / norm, p[1] + delta_m * dy / norm


def _check_line(intent, before, after, frame, out: _Checks):
    goal = intent.goal
    band = magnitude_band(goal.delta_m)
    a, b = before.get(goal.id), after.get(goal.id)
    if a is None or b is None or b.geometry.kind != "LineString":
        out.add("magnitude_band", False, f"{goal.id} missing or not a line after the edit")
        return
    old_len = LineString(frame.project_array(a.geometry.coordinates)).length
    new_xy = frame.project_array(b.geometry.coordinates)
    new_len = LineString(new_xy).length
    got = new_len - old_len
    tip = new_xy[-1] if goal.end == "tail" else new_xy[0]
    want_tip = expected_line_tip(frame, a.geometry.coordinates, goal.end, goal.delta_m)
    tip_err = math.hypot(tip[0] - want_tip[0], tip[1] - want_tip[1])
    keep = a.geometry.coordinates[0] if goal.end == "tail" else a.geometry.coordinates[-1]
    kept = b.geometry.coordinates[0] if goal.end == "tail" else b.geometry.coordinates[-1]
    ok = abs(got - goal.delta_m) <= band and tip_err <= band and kept == keep
    out.add("magnitude_band", ok,
            f"length change {got:+.3f} m vs {goal.delta_m:+.3f} m; "
            f"moved end off by {tip_err:.3f} m; fixed end {'kept' if kept == keep else 'moved'}",
            expected={"delta_m": goal.delta_m, "tip_xy": [round(v, 4) for v in want_tip]},
            observed={"delta_m": round(got, 4), "tip_error_m": round(tip_err, 4)})


def _union(shapes):
    return shapely.union_all(shapes) if shapes else shapely.Polygon()


def _check_polygon(intent, before, after, diff, frame, taxonomy, out: _Checks):
    goal = intent.goal
    spec: GrowthSpec = goal.growth_spec()
    greens_before = green_polygons(before, taxonomy)
    greens_after = green_polygons(after, taxonomy)
    shp_before = {gid: to_shape(frame, g) for gid, g in greens_before.items()}
    shp_after = {gid: to_shape(frame, g) for gid, g in greens_after.items()}
    union_before = _union(list(shp_before.values()))
    union_after = _union(list(shp_after.values()))
    added = union_after.difference(union_before)
    touched = set(diff.modified) | set(diff.removed)

    for c in intent.hard():
        if c.name == "validity" or c.name == "magnitude_band":
            continue
        if c.name == "target_ratio_band":
            target = spec.target_ratio * sum(s.area for s in shp_before.values())
            delta = union_after.area - union_before.area
            tol = c.param("tol", spec.area_tol_rel)
            if target > 0:
                rel = abs(delta - target) / target
                ok = rel <= tol
            else:
                rel, ok = abs(delta), abs(delta) <= AREA_EPS_M2
            out.add(c.name, ok, f"area change {delta:.2f} m2 vs target {target:.2f} m2 "
                    f"(relative error {rel:.4f}, tolerance {tol})",
                    expected=round(target, 3), observed=round(delta, 3))
        elif c.name == "road_buffer":
            width = c.param("m", spec.road_buffer_m)
            roads = road_shapes(frame, before, taxonomy)
            corridor = _union([r.buffer(width, quad_segs=64) for r in roads]) if width > 0 else _union(roads)
            hit = added.intersection(corridor).area if not added.is_empty else 0.0
            out.add(c.name, hit < AREA_EPS_M2, f"new green area inside road corridor: {hit:.3g} m2",
                    expected=0.0, observed=hit)
        elif c.name == "preserve_nongreen":
            nongreen = [to_shape(frame, f.geometry) for f in before
                        if f.geometry.level == "polygon" and f.id not in greens_before]
            hit = added.intersection(_union(nongreen)).area if nongreen and not added.is_empty else 0.0
            strays = sorted(touched - set(greens_before))
            out.add(c.name, not strays and hit < AREA_EPS_M2,
                    f"non-green features touched: {strays}; green growth over non-green: {hit:.3g} m2",
                    expected=[], observed=strays)
        elif c.name == "no_delete":
            out.add(c.name, not diff.removed, f"removed: {list(diff.removed)}",
                    expected=[], observed=list(diff.removed))
        elif c.name == "no_merge":
            ids = sorted(shp_before)
            merged = [[a, b] for i, a in enumerate(ids) for b in ids[i + 1:]
                      if not shp_before[a].intersects(shp_before[b])
                      and a in shp_after and b in shp_after
                      and shp_after[a].intersects(shp_after[b])]
            out.add(c.name, not merged, f"merged pairs: {merged}", expected=[], observed=merged)
        else:
            out.add(c.name, False, f"no check implements constraint {c.name!r}")

    protected = [to_shape(frame, f.geometry) for f in before
                 if f.geometry.level == "polygon" and f.id not in greens_before
                 and taxonomy.is_protected(f.properties)]
    if protected:
        hit = added.intersection(_union(protected)).area if not added.is_empty else 0.0
        out.add("protected_parcels", hit < AREA_EPS_M2,
                f"green growth over protected parcels: {hit:.3g} m2")


def _scope_allowed(intent, before, taxonomy) -> tuple[set, set]:
    """(ids that may change, ids that may disappear)."""
    if intent.level in ("point", "line"):
        return set(intent.scope), set()
    allowed = set(green_polygons(before, taxonomy))
    removable = set()
    if intent.goal.mode == "absorb":
        removable = {f.id for f in before
                     if f.geometry.level == "polygon" and f.id not in allowed
                     and classify_feature(f, taxonomy).semantic != "green"
                     and not taxonomy.is_protected(f.properties)}
    return allowed | removable, removable


def _validate_state_update(intent, subtask, before, outcome, frame, taxonomy, out: _Checks):
    out.add("no_observation", outcome.observation is None,
            "state-updating subtask reported an observation")
    after = outcome.next_layout
    diff = layout_diff(before, after)
    may_change, may_vanish = _scope_allowed(intent, before, taxonomy)
    strays = sorted((set(diff.modified) - may_change) | (set(diff.removed) - may_vanish)
                    | set(diff.added))
    out.add("scope", not strays, f"out-of-scope changes: {strays}",
            expected=sorted(may_change), observed=strays)

    defects = {}
    for fid in (*diff.modified, *diff.added):
        report = check_validity(frame, after.get(fid).geometry)
        if not report.valid:
            defects[fid] = report.defects[:3]
    out.add("validity", not defects, json.dumps(defects, sort_keys=True) if defects else "",
            expected="valid geometry", observed=defects)

    if intent.level == "point":
        _check_point(intent, before, after, frame, out)
    elif intent.level == "line":
        _check_line(intent, before, after, frame, out)
    elif defects:
        # area overlays are undefined on self-intersecting rings
        for c in intent.hard():
            if c.name not in ("validity", "magnitude_band"):
                out.add(c.name, False, "not evaluated: edited geometry is invalid")
    else:
        _check_polygon(intent, before, after, diff, frame, taxonomy, out)


def validate_outcome(intent: EditIntent, subtask: Subtask, before: UrbanLayout,
                     outcome: Outcome, taxonomy: Taxonomy = DEFAULT_TAXONOMY
                     ) -> ValidationDecision:
    out = _Checks()
    frame = frame_for(intent.level, intent.scope, before)
    if subtask.kind == "informational":
        _validate_informational(intent, subtask, before, outcome, frame, taxonomy, out)
    else:
        _validate_state_update(intent, subtask, before, outcome, frame, taxonomy, out)
    return out.decision()


# ---------------------------------------------------------------------------
# retries and the summary
# ---------------------------------------------------------------------------

@dataclass
class RetryBudget:
    R: int = 3
    used: int = 0

    def __post_init__(self):
        if self.R < 0:
            raise ValueError("retry budget must be non-negative")

    @property
    def exhausted(self) -> bool:
        return self.used >= self.R

    def spend(self):
        if self.exhausted:
            raise SubtaskExhausted("retry budget exhausted")
        self.used += 1


@dataclass
class AttemptRecord:
    level: str
    k: int
    tool: str
    kind: str
    decision: str
    retries_used: int
    wall_ms: float
    observation_digest: str | None
    failed_checks: list = field(default_factory=list)
    faulted: bool = False
    layout_digest: str = ""
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class ExecutionSummary:
    attempts: list = field(default_factory=list)
    commits: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    final_metrics_inputs: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    valid: bool = False
    failure: str | None = None

    @property
    def retry_stats(self) -> dict:
        stats: dict = {}
        for rec in self.attempts:
            stats.setdefault(rec.level, 0)
            if rec.decision != "accept":
                stats[rec.level] += 1
        return stats

    def records(self) -> list[dict]:
        rows = [dict(rec.to_record(), record="attempt") for rec in self.attempts]
        rows.append({
            "record": "summary", "valid": self.valid, "failure": self.failure,
            "commits": self.commits, "retry_stats": self.retry_stats,
            "trace": self.trace, "final_metrics_inputs": self.final_metrics_inputs,
            "wall_time_s": self.wall_time_s,
        })
        return rows

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.records())


def retry_loop(run_attempt: Callable[[int], tuple], budget: RetryBudget,
               on_reject: Callable[[ValidationDecision | None, str], None] | None = None):
    """Run attempts until one is accepted or the budget runs out.

    ``run_attempt(retry_index)`` returns ``(outcome, decision)``; a ``None``
    outcome stands for a tool error, described by the decision's diagnostic.
    Rejected outcomes are dropped here and never returned.
    """
    history = []
    while True:
        outcome, decision = run_attempt(budget.used)
        if outcome is not None and decision.accepted:
            return outcome, decision
        history.append(decision.failed)
        if on_reject is not None:
            on_reject(decision, "")
        if budget.exhausted:
            raise SubtaskExhausted(
                f"rejected {len(history)} times (last: {', '.join(decision.failed)})",
                attempts=history)
        budget.spend()


def tool_error_decision(exc: ToolError) -> ValidationDecision:
    return ValidationDecision("reject", (Check("tool_error", False, str(exc)),),
                              ({"failed_check": "tool_error", "expected": "tool success",
                                "observed": str(exc)},))


def aggregate(input_layout: UrbanLayout, attempts: list, committed: list
              ) -> UrbanLayout:
    """Final layout: the state after the last accepted state-updating outcome.

    ``attempts`` are AttemptRecords and ``committed`` the matching
    ``(record, layout)`` pairs of accepted outcomes, in order.
    """
    layout = input_layout
    for rec, after in committed:
        if rec.decision == "accept" and rec.kind == "state_updating":
            layout = after
    return layout

