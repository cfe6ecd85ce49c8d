import json
from dataclasses import replace

import numpy as np
import pytest
import shapely

from geoedit.errors import SessionFailed, SubtaskExhausted, ToolError
from geoedit.execution import (
    Controller,
    ExecutionState,
    FaultSpec,
    SessionConfig,
    execute_stage,
    execute_subtask,
    run_session,
)
from geoedit.geometry import to_shape
from geoedit.metrics import ace
from geoedit.model import layout_diff
from geoedit.planning import (
    AdjustLine,
    EditPlan,
    GrowGreens,
    Subtask,
    TranslatePoint,
    build_intent,
    make_plan,
    parse_structured,
)
from geoedit.tools import REGISTRY, frame_for, green_polygons

from conftest import BENCH_ID, CYCLEWAY_ID, FIXTURES

INSTRUCTIONS = json.loads((FIXTURES / "instructions.json").read_text())
QUIET = SessionConfig(record_timing=False)


def state_for(layout, level, scope):
    return ExecutionState(layout, level, 1, frame_for(level, scope, layout))


def test_registry_is_closed():
    assert sorted(REGISTRY) == sorted([
        "locate", "measure_length", "inventory_greens", "build_forbidden", "spacing_report",
        "translate", "adjust_line", "grow"])


def test_unknown_tool(patch_a):
    with pytest.raises(ToolError):
        execute_subtask(Subtask(1, "informational", "teleport"), state_for(patch_a, "point", ()))


def test_kind_mismatch_is_a_tool_error(patch_a):
    with pytest.raises(ToolError):
        execute_subtask(Subtask(1, "informational", "translate", (("id", BENCH_ID),)),
                        state_for(patch_a, "point", (BENCH_ID,)))


def test_measure_length_is_informational(patch_a):
    state = state_for(patch_a, "line", (CYCLEWAY_ID,))
    out = execute_subtask(Subtask(1, "informational", "measure_length", (("id", CYCLEWAY_ID),)), state)
    assert out.next_layout is patch_a
    assert out.observation.payload["length_m"] > 30


def test_translate_is_state_updating(patch_a):
    intent = build_intent(TranslatePoint(BENCH_ID, 270, 29))
    state = state_for(patch_a, "point", intent.scope)
    out = execute_subtask(intent.subtasks[1], state)
    assert out.observation is None
    assert layout_diff(patch_a, out.next_layout).modified == [BENCH_ID]


def test_tool_errors_wrap_toolkit_errors(patch_a):
    intent = build_intent(AdjustLine(CYCLEWAY_ID, "tail", -1e6))
    with pytest.raises(ToolError):
        execute_subtask(intent.subtasks[1], state_for(patch_a, "line", intent.scope))


def test_stage_order_and_skips(patch_a):
    plan = make_plan([TranslatePoint(BENCH_ID, 270, 10), GrowGreens(0.1),
                      AdjustLine(CYCLEWAY_ID, "head", 5)], 0.95)
    _, summary = run_session(patch_a, plan, QUIET)
    assert [t["level"] for t in summary.trace] == ["polygon", "line", "point"]
    seen = []
    for rec in summary.attempts:
        if not seen or seen[-1] != rec.level:
            seen.append(rec.level)
    assert seen == ["polygon", "line", "point"]

    _, summary = run_session(patch_a, make_plan([TranslatePoint(BENCH_ID, 0, 5)], 0.95), QUIET)
    assert summary.trace[0]["note"].startswith("skipped") and summary.trace[1]["level"] == "line"


def test_informational_only_plan_returns_input(patch_a):
    intent = build_intent(AdjustLine(CYCLEWAY_ID, "tail", -5))
    plan = EditPlan((replace(intent, subtasks=intent.subtasks[:1]),), "measure", 0.95)
    out, summary = run_session(patch_a, plan, QUIET)
    assert out == patch_a and summary.valid
    assert [r.kind for r in summary.attempts] == ["informational"]


def test_empty_stage_is_identity(patch_a):
    intent = replace(build_intent(GrowGreens(0.2)), subtasks=())
    controller = Controller(QUIET, 0)
    assert execute_stage("polygon", intent, patch_a, controller) is patch_a


def test_point_plan_moves_one_feature(patch_a):
    plan = parse_structured(INSTRUCTIONS["bench_west"], patch_a)
    out, summary = run_session(patch_a, plan, QUIET)
    diff = layout_diff(patch_a, out)
    assert diff.modified == [BENCH_ID] and not diff.added and not diff.removed
    assert summary.final_metrics_inputs["point"]["edit_coord"] == list(out.get(BENCH_ID).geometry.coordinates)


def test_polygon_stage_runs_the_four_subtasks(patch_a):
    plan = parse_structured(INSTRUCTIONS["grow_25_absorb"], patch_a)
    out, summary = run_session(patch_a, plan, QUIET)
    assert [r.tool for r in summary.attempts] == [
        "inventory_greens", "build_forbidden", "grow", "spacing_report"]
    assert sum(summary.retry_stats.values()) == len(summary.attempts) - len(summary.commits)
    # initial green area measured independently of the grower
    frame = frame_for("polygon", ("all-green",), patch_a)
    initial = shapely.union_all([to_shape(frame, g) for g in green_polygons(patch_a).values()]).area
    poly = summary.final_metrics_inputs["polygon"]
    assert poly["target_delta_area_m2"] == pytest.approx(0.25 * initial, rel=1e-6)
    assert ace(poly["achieved_delta_area_m2"], 0.25 * initial) <= 0.02


def test_blocked_green_exhausts_retries(blocked_layout):
    plan = make_plan([GrowGreens(0.2)], 0.95)
    with pytest.raises(SessionFailed) as info:
        run_session(blocked_layout, plan, QUIET)
    summary = info.value.summary
    grows = [r for r in summary.attempts if r.tool == "grow"]
    assert len(grows) == QUIET.retry_R + 1
    assert all(r.decision == "reject" for r in grows)
    assert "SubtaskExhausted" in summary.failure
    assert info.value.layout == blocked_layout
    assert not summary.valid


def test_stage_raises_subtask_exhausted(blocked_layout):
    intent = build_intent(GrowGreens(0.2))
    controller = Controller(SessionConfig(retry_R=1, record_timing=False), len(intent.subtasks))
    with pytest.raises(SubtaskExhausted):
        execute_stage("polygon", intent, blocked_layout, controller)


def test_zero_fault_probability_matches_clean_run(patch_a):
    plan = parse_structured(INSTRUCTIONS["cycleway_tail"], patch_a)
    clean = run_session(patch_a, plan, QUIET)
    zero = run_session(patch_a, plan, replace(QUIET, fault=FaultSpec(0.0), seed=99))
    assert clean[0] == zero[0]
    assert clean[1].to_jsonl() == zero[1].to_jsonl()


def test_certain_fault_without_retries_always_fails(patch_a):
    plan = parse_structured(INSTRUCTIONS["bench_west"], patch_a)
    for seed in range(20):
        with pytest.raises(SessionFailed):
            run_session(patch_a, plan, replace(QUIET, retry_R=0, fault=FaultSpec(1.0), seed=seed))


def test_always_corrupt_gives_four_attempts(patch_a):
    plan = parse_structured(INSTRUCTIONS["bench_west"], patch_a)
    with pytest.raises(SessionFailed) as info:
        run_session(patch_a, plan, replace(QUIET, retry_R=3, fault=FaultSpec(1.0)))
    attempts = info.value.summary.attempts
    assert len(attempts) == 4 and all(a.faulted and a.decision == "reject" for a in attempts)


def replay_attempts(seed, p, subtasks, R):
    """Attempts per subtask implied by the decision stream alone."""
    draws = np.random.default_rng([seed, 0]).random(subtasks * (R + 1))
    i, counts = 0, []
    for _ in range(subtasks):
        n = 0
        while True:
            faulted = draws[i] < p
            i += 1
            n += 1
            if not faulted:
                counts.append(n)
                break
            if n == R + 1:
                counts.append(n)
                return counts, False
    return counts, True


@pytest.mark.parametrize("instruction", ["bench_west", "cycleway_tail"])
def test_attempts_follow_the_seeded_fault_stream(patch_a, instruction):
    plan = parse_structured(INSTRUCTIONS[instruction], patch_a)
    for seed in range(40):
        cfg = replace(QUIET, retry_R=2, fault=FaultSpec(0.5), seed=seed)
        try:
            _, summary = run_session(patch_a, plan, cfg)
            ok = True
        except SessionFailed as exc:
            summary, ok = exc.summary, False
        counts, expect_ok = replay_attempts(seed, 0.5, 2, 2)
        got = [sum(1 for a in summary.attempts if a.k == k) for k in (1, 2)][:len(counts)]
        assert got == counts and ok == expect_ok
        assert all(a.faulted == (a.decision == "reject") for a in summary.attempts)


def test_summary_records_are_json_lines(patch_a):
    plan = parse_structured(INSTRUCTIONS["bench_west"], patch_a)
    _, summary = run_session(patch_a, plan, QUIET)
    rows = [json.loads(line) for line in summary.to_jsonl().splitlines()]
    assert [r["record"] for r in rows] == ["attempt", "attempt", "summary"]
    for key in ("level", "k", "tool", "kind", "decision", "retries_used", "wall_ms",
                "observation_digest"):
        assert key in rows[0]
    assert rows[0]["observation_digest"] and rows[1]["observation_digest"] is None


def test_sessions_are_byte_deterministic(patch_a):
    plan = parse_structured(INSTRUCTIONS["grow_48_preserve"], patch_a)
    cfg = replace(QUIET, fault=FaultSpec(0.4), seed=5)
    runs = []
    for _ in range(2):
        try:
            out, summary = run_session(patch_a, plan, cfg)
        except SessionFailed as exc:
            out, summary = exc.layout, exc.summary
        runs.append((out.digest, summary.to_jsonl()))
    assert runs[0] == runs[1]
