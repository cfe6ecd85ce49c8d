import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoedit.corpus import LabeledTask, destination, gen_tasks, haversine_m, point_along
from geoedit.errors import EmptyCorpus, ZeroMagnitude, ZeroTarget
from geoedit.evaluate import run_task
from geoedit.execution import SessionConfig
from geoedit.metrics import REFERENCE, TaskResult, ace, evr, ree, report

from conftest import CYCLEWAY_ID

ORIGIN = (10.0, 45.0)


def point_result(tid, value, valid=True, m=20.0):
    label = ORIGIN
    edit = destination(label, 90, value * m)
    return TaskResult(tid, "point", valid, edit_coord=edit, label_coord=label, magnitude=m)


def test_ree_examples():
    assert ree(ORIGIN, ORIGIN, 17) == 0
    five_m = destination(ORIGIN, 90, 5)
    assert ree(five_m, ORIGIN, 20) == pytest.approx(0.25, rel=1e-6)
    with pytest.raises(ZeroMagnitude):
        ree(ORIGIN, ORIGIN, 0)


def test_ace_examples():
    assert ace(100, 100) == 0
    assert ace(81, 100) == pytest.approx(0.19, abs=1e-15)
    with pytest.raises(ZeroTarget):
        ace(1, 0)


def test_evr_examples():
    results = [point_result(str(i), 0.0, valid=i < 7) for i in range(10)]
    assert evr(results) == 0.7
    assert evr(results[:7]) == 1.0
    with pytest.raises(EmptyCorpus):
        evr([])


def test_report_statistics():
    rep = report([point_result(str(i), v) for i, v in enumerate((0.1, 0.2, 0.3))])
    row = rep.row("point")
    assert row.mean == pytest.approx(0.2, abs=1e-7)
    assert row.std == pytest.approx(math.sqrt(2 / 300), abs=1e-6)
    assert row.std == pytest.approx(0.0816, abs=1e-4)
    single = report([point_result("a", 0.3)]).row("point")
    assert single.std == 0


def test_invalid_tasks_count_only_in_evr():
    results = [point_result("a", 0.1), point_result("b", 0.3), point_result("c", 5.0, valid=False)]
    row = report(results).row("point")
    assert row.n == 3 and row.n_valid == 2
    assert row.mean == pytest.approx(0.2, abs=1e-7)
    assert row.evr == pytest.approx(2 / 3)


def test_mixed_levels_partition():
    results = [point_result("p1", 0.1), point_result("p2", 0.2),
               TaskResult("g1", "polygon", True, delta_area=90, target_area=100),
               TaskResult("g2", "polygon", False, target_area=100),
               TaskResult("l1", "line", True, edit_coord=ORIGIN, label_coord=ORIGIN, magnitude=5)]
    rep = report(results)
    assert [r.level for r in rep.rows] == ["point", "line", "polygon"]
    assert sum(r.n for r in rep.rows) == len(results)
    assert rep.row("polygon").mean == pytest.approx(0.1)
    doc = json.loads(rep.to_json())
    assert doc["reference"]["polygon"] == {"metric": [0.081, 0.105], "evr": [0.979, 0.017]}
    assert "L3" in rep.to_text() and "0.081" in rep.to_text()


def test_reference_values():
    assert REFERENCE["point"] == {"metric": (0.187, 0.235), "evr": (0.975, 0.019)}
    assert REFERENCE["line"] == {"metric": (0.319, 0.396), "evr": (0.947, 0.042)}


def test_line_task_ree_against_dense_oracle(patch_a):
    line = patch_a.get(CYCLEWAY_ID).geometry.coordinates
    tail_first = list(reversed(line))
    length = sum(haversine_m(a, b) for a, b in zip(line[:-1], line[1:]))
    label = point_along(list(line), length - 17)
    tail_label = point_along(tail_first, 17)
    assert haversine_m(label, tail_label) < 0.01
    task = LabeledTask("cw", "line",
                       f"Locate the cycling path (ID: {CYCLEWAY_ID}) and shorten its ending point "
                       "(Tail) by about 17 meters.", "patch_a",
                       {"id": CYCLEWAY_ID, "end": "tail", "delta_m": -17.0, "magnitude_m": 17.0,
                        "length_m": length, "g_label": list(tail_label)}, 0)
    res = run_task(task, patch_a, SessionConfig(record_timing=False))
    assert res.valid
    oracle = haversine_m(res.edit_coord, tail_label) / 17
    assert res.value == pytest.approx(oracle, abs=1e-6)
    assert res.value < 0.01


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 500), st.floats(0.1, 1000), st.floats(0.1, 10), st.floats(0, 359))
def test_ree_scale_covariance(d, m, k, bearing):
    a = ree(destination(ORIGIN, bearing, d), ORIGIN, m)
    b = ree(destination(ORIGIN, bearing, k * d), ORIGIN, k * m)
    assert a == pytest.approx(b, rel=1e-3)


@settings(max_examples=200, deadline=None)
@given(st.floats(1, 1e6), st.floats(0, 1e6))
def test_ace_symmetry(target, delta):
    assert ace(target + delta, target) == pytest.approx(ace(target - delta, target), rel=1e-12)
    assert ace(target + delta, target) >= 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_evr_bounds_and_exact_fraction(flags):
    results = [point_result(str(i), 0.0, valid=v) for i, v in enumerate(flags)]
    assert 0 <= evr(results) <= 1
    assert Fraction(evr(results)).limit_denominator(100) == Fraction(sum(flags), len(flags))
    more = results + [point_result("extra", 0.0)]
    assert evr(more) >= evr(results)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=12), st.randoms())
def test_report_is_order_insensitive(values, rnd):
    results = [point_result(str(i), v) for i, v in enumerate(values)]
    shuffled = results[:]
    rnd.shuffle(shuffled)
    a, b = report(results), report(shuffled)
    assert a.to_json() == b.to_json() or (
        a.row("point").mean == pytest.approx(b.row("point").mean)
        and a.row("point").std == pytest.approx(b.row("point").std, abs=1e-12))
    assert a.per_task == b.per_task


def test_generated_tasks_report(patch_a):
    tasks = gen_tasks(patch_a, "point", 10, seed=1, layout_ref="patch_a")
    results = [run_task(t, patch_a, SessionConfig(record_timing=False)) for t in tasks]
    row = report(results).row("point")
    assert row.evr == 1.0 and row.mean < 0.01
