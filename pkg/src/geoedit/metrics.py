"""Per-task error metrics and their corpus-level summary table.

REE: planar distance between executed and labeled coordinates over the
instructed magnitude. ACE: relative deviation of the achieved green-area
change from its target. EVR: fraction of tasks that ran to completion
with valid output. Means and standard deviations (population form) use
valid tasks only; EVR counts every task.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from statistics import fmean, pstdev

from .errors import EmptyCorpus, ZeroMagnitude, ZeroTarget
from .model import GeoCoord
from .projection import PlanarFrame, make_frame

LEVEL_NAMES = {"point": "L1", "line": "L2", "polygon": "L3"}

# Published agentic-row numbers, shown beside ours for context only.
REFERENCE = {
    "point": {"metric": (0.187, 0.235), "evr": (0.975, 0.019)},
    "line": {"metric": (0.319, 0.396), "evr": (0.947, 0.042)},
    "polygon": {"metric": (0.081, 0.105), "evr": (0.979, 0.017)},
}


def _coord(c) -> GeoCoord:
    return c if isinstance(c, GeoCoord) else GeoCoord(*c)


def ree(g_edit, g_label, m: float, frame: PlanarFrame | None = None) -> float:
    if not m > 0:
        raise ZeroMagnitude(f"magnitude must be positive, got {m}")
    edit, label = _coord(g_edit), _coord(g_label)
    frame = frame or make_frame(label)
    ex, ey = frame.to_xy(edit.lon, edit.lat)
    lx, ly = frame.to_xy(label.lon, label.lat)
    return math.hypot(ex - lx, ey - ly) / m


def ace(delta_area: float, target_area: float) -> float:
    if not target_area > 0:
        raise ZeroTarget(f"target area must be positive, got {target_area}")
    return abs(delta_area - target_area) / target_area


@dataclass
class TaskResult:
    task_id: str
    level: str
    valid: bool
    edit_coord: tuple | None = None
    label_coord: tuple | None = None
    magnitude: float | None = None
    delta_area: float | None = None
    target_area: float | None = None
    feasible: bool | None = None
    retries: int = 0
    note: str = ""

    @property
    def value(self) -> float | None:
        """REE for point/line tasks, ACE for polygon tasks; None when invalid."""
        if not self.valid:
            return None
        if self.level == "polygon":
            return ace(self.delta_area, self.target_area)
        return ree(self.edit_coord, self.label_coord, self.magnitude)


def evr(results) -> float:
    results = list(results)
    if not results:
        raise EmptyCorpus("no task results")
    return sum(1 for r in results if r.valid) / len(results)


@dataclass
class LevelRow:
    level: str
    n: int
    n_valid: int
    metric: str
    mean: float | None
    std: float | None
    evr: float

    @property
    def label(self) -> str:
        return LEVEL_NAMES.get(self.level, self.level)


@dataclass
class MetricReport:
    rows: list
    per_task: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, level: str) -> LevelRow | None:
        return next((r for r in self.rows if r.level == level), None)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "rows": [dict(asdict(r), label=r.label) for r in self.rows],
            "reference": {lv: REFERENCE[lv] for lv in (r.level for r in self.rows)
                          if lv in REFERENCE},
            "tasks": self.per_task,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_text(self) -> str:
        head = f"{'level':<6}{'metric':<8}{'N':>6}{'valid':>7}{'mean±std':>20}{'EVR':>8}   reference"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            stat = "n/a" if r.mean is None else f"{r.mean:.4f}±{r.std:.4f}"
            ref = REFERENCE.get(r.level)
            ref_txt = (f"{ref['metric'][0]:.3f}±{ref['metric'][1]:.3f} / "
                       f"{ref['evr'][0]:.3f}" if ref else "")
            lines.append(f"{r.label:<6}{r.metric:<8}{r.n:>6}{r.n_valid:>7}{stat:>20}"
                         f"{r.evr:>8.4f}   {ref_txt}")
        return "\n".join(lines) + "\n"


def report(results, meta: dict | None = None) -> MetricReport:
    results = list(results)
    if not results:
        raise EmptyCorpus("no task results")
    rows, per_task = [], []
    by_level: dict = {}
    for r in results:
        by_level.setdefault(r.level, []).append(r)
    for level in ("point", "line", "polygon"):
        group = by_level.pop(level, None)
        if group is None:
            continue
        values = [v for v in (r.value for r in group) if v is not None]
        rows.append(LevelRow(
            level=level, n=len(group), n_valid=len(values),
            metric="ACE" if level == "polygon" else "REE",
            mean=fmean(values) if values else None,
            std=pstdev(values) if values else None,
            evr=evr(group),
        ))
    if by_level:
        raise ValueError(f"unknown levels in results: {sorted(by_level)}")
    for r in sorted(results, key=lambda r: r.task_id):
        per_task.append({"task_id": r.task_id, "level": r.level, "valid": r.valid,
                         "value": r.value, "feasible": r.feasible, "retries": r.retries,
                         "note": r.note})
    return MetricReport(rows, per_task, meta or {})
