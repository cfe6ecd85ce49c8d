"""Instruction planning: natural-language text -> :class:`EditPlan`.

Two backends produce the same plan structure. The grammar backend is a
deterministic keyword/regex parser over the three instruction families
(point move, line adjust, green growth). The external backend sends a
prompt to a text-completion endpoint and parses the returned JSON payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Union

import jsonschema
import requests

from .errors import (
    EndpointUnavailable,
    NoRatioFound,
    SchemaViolation,
    UnparseableInstruction,
)
from .geometry import GrowthSpec
from .model import UrbanLayout

LEVELS = ("polygon", "line", "point")
CHECK_NAMES = frozenset({
    "road_buffer", "no_merge", "preserve_nongreen", "no_delete",
    "validity", "target_ratio_band", "magnitude_band",
})
SCHEMA_VERSION = 1


@lru_cache(maxsize=1)
def grammar_tables() -> dict:
    text = resources.files("geoedit").joinpath("data/grammar.json").read_text("utf-8")
    return json.loads(text)


# ---------------------------------------------------------------------------
# plan types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TranslatePoint:
    id: str
    bearing: float
    dist_m: float


@dataclass(frozen=True)
class AdjustLine:
    id: str
    end: str
    delta_m: float  # positive extends, negative shortens


@dataclass(frozen=True)
class GrowGreens:
    target_ratio: float | None
    road_buffer_m: float = 2.0
    spacing_m: float = 8.0
    mode: str = "preserve"
    no_merge: bool = False
    area_tol_rel: float = 0.01

    def growth_spec(self) -> GrowthSpec:
        if self.target_ratio is None:
            raise ValueError("growth goal has no target ratio")
        return GrowthSpec(target_ratio=self.target_ratio, road_buffer_m=self.road_buffer_m,
                          spacing_m=self.spacing_m, mode=self.mode,
                          area_tol_rel=self.area_tol_rel, no_merge=self.no_merge)


GoalSpec = Union[TranslatePoint, AdjustLine, GrowGreens]


@dataclass(frozen=True)
class Constraint:
    kind: str  # hard | soft
    name: str
    params: tuple = ()

    def param(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class Subtask:
    index: int
    kind: str  # informational | state_updating
    tool: str
    args: tuple = ()
    expects: str = ""

    @property
    def arguments(self) -> dict:
        return dict(self.args)


@dataclass(frozen=True)
class EditIntent:
    level: str
    scope: tuple
    goal: GoalSpec
    subtasks: tuple
    constraints: tuple

    def hard(self) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == "hard"]

    def has(self, name: str) -> bool:
        return any(c.name == name for c in self.constraints)


@dataclass(frozen=True)
class EditPlan:
    intents: tuple
    intent_summary: str
    confidence: float
    source: str = "grammar"

    def __post_init__(self):
        levels = [i.level for i in self.intents]
        if len(set(levels)) != len(levels):
            raise ValueError("at most one intent per level")
        if levels != [lv for lv in LEVELS if lv in levels]:
            raise ValueError("intents must be ordered polygon, line, point")

    def intent(self, level: str) -> EditIntent | None:
        for i in self.intents:
            if i.level == level:
                return i
        return None

    def to_dict(self) -> dict:
        def conv(obj):
            if isinstance(obj, tuple):
                return [conv(o) for o in obj]
            if isinstance(obj, dict):
                return {k: conv(v) for k, v in obj.items()}
            return obj

        out = conv(asdict(self))
        for intent, raw in zip(self.intents, out["intents"]):
            raw["goal"]["type"] = type(intent.goal).__name__
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# subtask templates and constraints
# ---------------------------------------------------------------------------

def _args(**kw) -> tuple:
    return tuple(sorted(kw.items()))


def _subtasks_for(goal: GoalSpec) -> tuple:
    if isinstance(goal, TranslatePoint):
        return (
            Subtask(1, "informational", "locate", _args(id=goal.id),
                    "current coordinate of the target point"),
            Subtask(2, "state_updating", "translate",
                    _args(id=goal.id, bearing=goal.bearing, dist_m=goal.dist_m),
                    f"point moved {goal.dist_m:g} m at bearing {goal.bearing:g}"),
        )
    if isinstance(goal, AdjustLine):
        verb = "extended" if goal.delta_m >= 0 else "shortened"
        return (
            Subtask(1, "informational", "measure_length", _args(id=goal.id),
                    "current planar length of the line"),
            Subtask(2, "state_updating", "adjust_line",
                    _args(id=goal.id, end=goal.end, delta_m=goal.delta_m),
                    f"line {verb} by {abs(goal.delta_m):g} m at its {goal.end}"),
        )
    spec = _args(target_ratio=goal.target_ratio, road_buffer_m=goal.road_buffer_m,
                 spacing_m=goal.spacing_m, mode=goal.mode, no_merge=goal.no_merge,
                 area_tol_rel=goal.area_tol_rel)
    return (
        Subtask(1, "informational", "inventory_greens", (),
                "green polygon ids and their total area"),
        Subtask(2, "informational", "build_forbidden", spec,
                "area of the region growth may not enter"),
        Subtask(3, "state_updating", "grow", spec,
                "green area increased to the target ratio"),
        Subtask(4, "informational", "spacing_report", _args(spacing_m=goal.spacing_m),
                "pairwise separation between green polygons"),
    )


def _constraints_for(goal: GoalSpec, flags: dict | None = None) -> tuple:
    flags = flags or {}
    if isinstance(goal, (TranslatePoint, AdjustLine)):
        return (Constraint("hard", "validity"), Constraint("hard", "magnitude_band"))
    out = [
        Constraint("hard", "validity"),
        Constraint("hard", "road_buffer", _args(m=goal.road_buffer_m)),
        Constraint("hard", "target_ratio_band", _args(tol=goal.area_tol_rel)),
    ]
    if goal.mode == "preserve":
        out.append(Constraint("hard", "preserve_nongreen"))
    if goal.mode == "preserve" or flags.get("no_delete"):
        out.append(Constraint("hard", "no_delete"))
    if goal.no_merge:
        out.append(Constraint("hard", "no_merge"))
    if goal.spacing_m > 0:
        out.append(Constraint("soft", "spacing", _args(m=goal.spacing_m)))
    return tuple(out)


def _summary(goal: GoalSpec) -> str:
    if isinstance(goal, TranslatePoint):
        return f"move point {goal.id} {goal.dist_m:g} m at bearing {goal.bearing:g} deg"
    if isinstance(goal, AdjustLine):
        op = "extend" if goal.delta_m >= 0 else "shorten"
        return f"{op} line {goal.id} by {abs(goal.delta_m):g} m at its {goal.end}"
    if goal.target_ratio is None:
        return "grow all green polygons; no explicit target ratio was given"
    return (f"grow all green polygons to add {goal.target_ratio:.4g} of their area "
            f"({goal.mode} mode)")


def build_intent(goal: GoalSpec, flags: dict | None = None) -> EditIntent:
    if isinstance(goal, TranslatePoint):
        level, scope = "point", (goal.id,)
    elif isinstance(goal, AdjustLine):
        level, scope = "line", (goal.id,)
    else:
        level, scope = "polygon", ("all-green",)
    return EditIntent(level, scope, goal, _subtasks_for(goal), _constraints_for(goal, flags))


def make_plan(goals: list, confidence: float, source: str = "grammar",
              flags: dict | None = None, summary: str | None = None) -> EditPlan:
    intents = sorted((build_intent(g, flags) for g in goals),
                     key=lambda i: LEVELS.index(i.level))
    text = summary if summary is not None else "; ".join(_summary(i.goal) for i in intents)
    return EditPlan(tuple(intents), text, confidence, source)


# ---------------------------------------------------------------------------
# grammar backend
# ---------------------------------------------------------------------------

_NUM = r"(\d+(?:\.\d+)?)"
_UNIT_RE = re.compile(_NUM + r"\s*(?:m|meters?|metres?)\b", re.I)
_ID_RE = re.compile(r"\bID\s*[:=#]\s*([A-Za-z_]+/[\w.#-]+|[\w.#-]+)")
_BARE_ID_RE = re.compile(r"\b((?:node|way|relation)/\d+)\b")
_PERCENT_RE = re.compile(_NUM + r"\s*(?:%|percent\b|per cent\b|pct\b)", re.I)


def _normalize(text: str) -> str:
    text = text.replace("∼", "~").replace("’", "'").replace("—", ",")
    text = re.sub(r"\$\\sim\$|\\,", " ", text)
    return text


def _has_word(text: str, words) -> bool:
    return _first_word(text, words) is not None


def _first_word(text: str, words):
    best = None
    for w in words:
        m = re.search(r"(?<![\w-])" + re.escape(w) + r"(?![\w-])", text, re.I)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), w)
    return best


def normalize_ratio(fragment: str) -> float:
    """Decimal ratio for a percentage or fraction phrase (4 decimal places)."""
    text = _normalize(fragment)
    m = _PERCENT_RE.search(text)
    if m:
        return round(float(m.group(1)) / 100.0, 4)
    words = grammar_tables()["ratio_words"]
    hit = None
    for phrase in sorted(words, key=len, reverse=True):
        mm = re.search(r"\b" + re.escape(phrase) + r"\b", text, re.I)
        if mm and (hit is None or mm.start() < hit[0]):
            hit = (mm.start(), phrase)
    if hit:
        return round(float(words[hit[1]]), 4)
    raise NoRatioFound(f"no percentage or ratio in {fragment!r}")


def _direction(text: str) -> float | None:
    dirs = grammar_tables()["directions"]
    t = re.sub(r"\b(north|south)[\s-]+(east|west)", r"\1\2", text, flags=re.I).lower()
    found = []
    for name, bearing in dirs.items():
        m = re.search(r"\b" + name + r"(?:ward|wards|ern|erly)?\b", t)
        if m:
            found.append((m.start(), -len(name), bearing))
    if not found:
        return None
    return float(sorted(found)[0][2])


def _line_end(text: str) -> str | None:
    g = grammar_tables()
    # explicit head/tail markers outrank start/end vocabulary
    explicit = [w for w in ("head", "tail") if _has_word(text, [w])]
    if len(explicit) == 1:
        return explicit[0]
    head = _has_word(text, g["head_words"])
    tail = _has_word(text, g["tail_words"])
    if head and not tail:
        return "head"
    if tail and not head:
        return "tail"
    return None


def _clauses(text: str) -> list[str]:
    parts = re.split(r"[.;!?\n]+|,\s*(?:and|but|while)\s+", text)
    return [p.strip() for p in parts if p.strip()]


def _negated_mention(text: str, words) -> tuple[bool, bool]:
    """(mentioned affirmatively, mentioned under negation) across clauses."""
    neg = grammar_tables()["negations"]
    pos_hit = neg_hit = False
    for clause in _clauses(text):
        hit = _first_word(clause, words)
        if not hit:
            continue
        n = _first_word(clause, neg)
        if n is not None and n[0] < hit[0] + 1:
            neg_hit = True
        else:
            pos_hit = True
    return pos_hit, neg_hit


def _sentence_spans(text: str):
    start = 0
    for m in re.finditer(r"[.;!?\n]+", text):
        yield start, m.end()
        start = m.end()
    yield start, len(text)


def _keyword_numbers(text: str) -> dict:
    """Assign each 'N m' quantity to the nearest spacing or road keyword."""
    g = grammar_tables()
    classes = {"spacing": g["spacing_words"], "road": g["road_words"]}
    out: dict = {}
    for s0, s1 in _sentence_spans(text):
        sentence = text[s0:s1]
        for m in _UNIT_RE.finditer(sentence):
            best = None
            for cls, words in classes.items():
                for w in words:
                    for k in re.finditer(r"\b" + re.escape(w) + r"\b", sentence, re.I):
                        dist = m.start() - k.end() if k.end() <= m.start() else k.start() - m.end()
                        if best is None or dist < best[0]:
                            best = (abs(dist), cls)
            if best is not None and best[1] not in out:
                out[best[1]] = float(m.group(1))
    return out


def _feature_id(text: str) -> str | None:
    m = _ID_RE.search(text)
    if m:
        return m.group(1).rstrip(".,;)")
    m = _BARE_ID_RE.search(text)
    return m.group(1) if m else None


def _longest_fragment(text: str) -> str:
    g = grammar_tables()
    vocab = (g["point_verbs"] + g["shorten_verbs"] + g["extend_verbs"] + g["grow_verbs"])
    hit = _first_word(text, vocab)
    if hit is None:
        return text[:60]
    return text[hit[0]:hit[0] + 60]


def _detect_level(text: str, fid: str | None, layout: UrbanLayout | None) -> str | None:
    g = grammar_tables()
    if fid is not None:
        kind = None
        if layout is not None and fid in layout:
            kind = layout.get(fid).geometry.level
        line_verb = _has_word(text, g["shorten_verbs"] + g["extend_verbs"])
        point_verb = _has_word(text, g["point_verbs"])
        if kind == "line" and line_verb:
            return "line"
        if kind == "point" and point_verb:
            return "point"
        if line_verb and _line_end(text):
            return "line"
        if point_verb and _direction(text) is not None:
            return "point"
        if line_verb:
            return "line"
        return None
    if _has_word(text, g["green_words"]) and _has_word(text, g["grow_verbs"]):
        return "polygon"
    return None


def parse_structured(instruction: str, layout: UrbanLayout | None = None) -> EditPlan:
    """Deterministic grammar parse of one instruction into an :class:`EditPlan`."""
    if not instruction or not instruction.strip():
        raise UnparseableInstruction("empty instruction")
    text = _normalize(instruction)
    g = grammar_tables()
    fid = _feature_id(text)
    level = _detect_level(text, fid, layout)
    if level is None:
        raise UnparseableInstruction("no instruction pattern matched",
                                     fragment=_longest_fragment(text))

    if level in ("point", "line"):
        m = _UNIT_RE.search(text)
        if m is None:
            raise UnparseableInstruction(f"{level} edit without a distance in meters",
                                         fragment=_longest_fragment(text))
        dist = float(m.group(1))
        if level == "point":
            bearing = _direction(text)
            if bearing is None:
                raise UnparseableInstruction("point move without a direction",
                                             fragment=_longest_fragment(text))
            goal = TranslatePoint(fid, bearing, dist)
        else:
            end = _line_end(text)
            if end is None:
                raise UnparseableInstruction("line edit without a head/tail end",
                                             fragment=_longest_fragment(text))
            shorten = _first_word(text, g["shorten_verbs"])
            extend = _first_word(text, g["extend_verbs"])
            if shorten and (not extend or shorten[0] < extend[0]):
                delta = -dist
            else:
                delta = dist
            goal = AdjustLine(fid, end, delta)
        return make_plan([goal], 0.95)

    try:
        ratio = normalize_ratio(text)
        numeric = _PERCENT_RE.search(text) is not None
        confidence = 0.95 if numeric else 0.7
    except NoRatioFound:
        ratio, confidence = None, 0.4
    numbers = _keyword_numbers(text)
    absorb_pos, _ = _negated_mention(text, g["absorb_words"])
    _, merge_neg = _negated_mention(text, g["merge_words"])
    _, delete_neg = _negated_mention(text, g["delete_words"])
    goal = GrowGreens(
        target_ratio=ratio,
        road_buffer_m=numbers.get("road", 2.0),
        spacing_m=numbers.get("spacing", 8.0),
        mode="absorb" if absorb_pos else "preserve",
        no_merge=merge_neg,
    )
    return make_plan([goal], confidence, flags={"no_delete": delete_neg})


# ---------------------------------------------------------------------------
# plan checks
# ---------------------------------------------------------------------------

@dataclass
class PlanCheck:
    ok: bool
    issues: list = field(default_factory=list)


_EXPECTED_KIND = {"point": "point", "line": "line"}


def validate_plan(plan: EditPlan, layout: UrbanLayout) -> PlanCheck:
    issues = []
    for intent in plan.intents:
        if not intent.subtasks:
            issues.append(("EmptySubtasks", intent.level))
        for c in intent.constraints:
            if c.kind == "hard" and c.name not in CHECK_NAMES:
                issues.append(("UncheckableConstraint", c.name))
        goal = intent.goal
        if isinstance(goal, (TranslatePoint, AdjustLine)):
            f = layout.get(goal.id)
            if f is None:
                issues.append(("MissingFeature", goal.id))
            elif f.geometry.level != _EXPECTED_KIND[intent.level]:
                issues.append(("LevelMismatch", goal.id))
            if isinstance(goal, TranslatePoint) and goal.dist_m < 0:
                issues.append(("NegativeMagnitude", goal.id))
        elif isinstance(goal, GrowGreens):
            if goal.target_ratio is None:
                issues.append(("MissingTargetRatio", "polygon"))
                if plan.confidence > 0.5:
                    issues.append(("ConfidenceBand", plan.confidence))
            elif goal.target_ratio < 0:
                issues.append(("UnsupportedShrink", "polygon"))
            elif plan.confidence < 0.6:
                issues.append(("ConfidenceBand", plan.confidence))
    return PlanCheck(not issues, issues)


# ---------------------------------------------------------------------------
# external backend
# ---------------------------------------------------------------------------

PLAN_PAYLOAD_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "level", "intent_summary", "target_scope",
                 "target_ratio", "goal", "hard_constraints", "soft_preferences",
                 "subtasks", "confidence"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "level": {"enum": list(LEVELS)},
        "intent_summary": {"type": "string"},
        "target_scope": {"anyOf": [{"const": "all-green"},
                                   {"type": "array", "items": {"type": "string"}}]},
        "target_ratio": {"type": ["number", "null"]},
        "goal": {
            "type": "object",
            "properties": {
                "feature_id": {"type": "string"},
                "bearing_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 360},
                "distance_m": {"type": "number", "minimum": 0},
                "end": {"enum": ["head", "tail"]},
                "delta_m": {"type": "number"},
                "mode": {"enum": ["preserve", "absorb"]},
                "road_buffer_m": {"type": "number", "minimum": 0},
            },
        },
        "hard_constraints": {"type": "array", "items": {"enum": sorted(CHECK_NAMES)}},
        "soft_preferences": {
            "type": "array",
            "items": {"type": "object", "required": ["name"],
                      "properties": {"name": {"type": "string"},
                                     "value_m": {"type": "number", "minimum": 0}}},
        },
        "subtasks": {"type": "array", "items": {"type": "string"}},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
    },
}


def plan_to_payload(plan: EditPlan) -> dict:
    """The payload document an external planner should return for ``plan``."""
    intent = plan.intents[0]
    goal = intent.goal
    payload: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "level": intent.level,
        "intent_summary": plan.intent_summary,
        "target_scope": "all-green" if intent.scope == ("all-green",) else list(intent.scope),
        "target_ratio": getattr(goal, "target_ratio", None),
        "hard_constraints": [c.name for c in intent.hard()],
        "soft_preferences": [{"name": c.name, "value_m": c.param("m")}
                             for c in intent.constraints if c.kind == "soft"],
        "subtasks": [s.expects for s in intent.subtasks],
        "confidence": plan.confidence,
    }
    if isinstance(goal, TranslatePoint):
        payload["goal"] = {"feature_id": goal.id, "bearing_deg": goal.bearing,
                           "distance_m": goal.dist_m}
    elif isinstance(goal, AdjustLine):
        payload["goal"] = {"feature_id": goal.id, "end": goal.end, "delta_m": goal.delta_m}
    else:
        payload["goal"] = {"mode": goal.mode, "road_buffer_m": goal.road_buffer_m}
    return payload


def parse_plan_payload(text: str) -> EditPlan:
    """Strictly parse an external planner's JSON payload into an EditPlan."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("payload is not a single JSON document",
                              [f"json: {exc.msg} at position {exc.pos}"]) from None
    validator = jsonschema.Draft202012Validator(PLAN_PAYLOAD_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        raise SchemaViolation("payload does not match the plan schema",
                              [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}"
                               for e in errors])
    level, goal_doc = doc["level"], doc["goal"]
    try:
        if level == "point":
            goal = TranslatePoint(goal_doc["feature_id"], float(goal_doc["bearing_deg"]),
                                  float(goal_doc["distance_m"]))
        elif level == "line":
            goal = AdjustLine(goal_doc["feature_id"], goal_doc["end"], float(goal_doc["delta_m"]))
        else:
            spacing = next((p.get("value_m") for p in doc["soft_preferences"]
                            if p["name"] == "spacing" and p.get("value_m") is not None), 8.0)
            goal = GrowGreens(
                target_ratio=doc["target_ratio"],
                road_buffer_m=float(goal_doc.get("road_buffer_m", 2.0)),
                spacing_m=float(spacing),
                mode=goal_doc.get("mode", "preserve"),
                no_merge="no_merge" in doc["hard_constraints"],
            )
    except KeyError as exc:
        raise SchemaViolation("goal is missing a field", [f"goal: missing {exc}"]) from None
    flags = {"no_delete": "no_delete" in doc["hard_constraints"]}
    return make_plan([goal], float(doc["confidence"]), source="external", flags=flags,
                     summary=doc["intent_summary"])


@dataclass(frozen=True)
class DecodingSpec:
    do_sample: bool = False
    temperature: float = 1.0
    top_p: float = 1.0
    max_new_tokens: int = 256

    @classmethod
    def for_level(cls, level: str, replanning: bool = False) -> "DecodingSpec":
        tokens = 400 if replanning else 256
        if level == "polygon":
            return cls(True, 0.9, 0.9, tokens)
        return cls(False, 1.0, 1.0, tokens)


PLANNER_PROMPT = """You turn one urban map editing request into a JSON plan.
The map is a GeoJSON layout of points, lines and polygons. Requests are of three kinds:
move a point by a distance in a compass direction, shorten or extend a line at its head or tail,
or grow the green polygons by a percentage of their current total area.
Write percentages as decimal ratios (30% -> 0.30). Use null for target_ratio when none is given.
List must-hold rules under hard_constraints using only these names: {checks}.
List nice-to-have rules under soft_preferences.
Confidence: 0.9 or more for an explicit numeric target, 0.6-0.8 for an inferred one, 0.5 or less when unclear.
Reply with exactly one JSON object matching this schema and nothing else:
{schema}

Request:
{instruction}
"""

REPAIR_PROMPT = """Your previous reply was rejected:
{errors}
Reply again with exactly one JSON object matching the schema and nothing else.
"""


class ExternalPlanner:
    """Text-completion planner reached over HTTP.

    Endpoint and key come from ``GEOEDIT_LLM_URL`` / ``GEOEDIT_LLM_KEY``
    unless given. ``http`` is anything with a requests-style ``post``.
    """

    def __init__(self, url: str | None = None, key: str | None = None,
                 timeout: float = 60.0, http=None):
        self.url = url or os.environ.get("GEOEDIT_LLM_URL")
        self.key = key if key is not None else os.environ.get("GEOEDIT_LLM_KEY", "")
        self.timeout = timeout
        self.http = http if http is not None else requests.Session()

    def complete(self, prompt: str, decoding: DecodingSpec) -> str:
        if not self.url:
            raise EndpointUnavailable("GEOEDIT_LLM_URL is not configured")
        body = {"prompt": prompt, **asdict(decoding)}
        headers = {"Authorization": f"Bearer {self.key}"} if self.key else {}
        try:
            resp = self.http.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise EndpointUnavailable(f"planner endpoint failed: {exc}") from exc
        if resp.status_code >= 400:
            raise EndpointUnavailable(f"planner endpoint returned HTTP {resp.status_code}")
        try:
            data = resp.json()
        except ValueError:
            raise EndpointUnavailable("planner endpoint returned non-JSON body") from None
        return _completion_text(data)

    def plan(self, instruction: str, layout: UrbanLayout | None = None) -> EditPlan:
        level = _guess_level(instruction, layout)
        prompt = PLANNER_PROMPT.format(
            checks=", ".join(sorted(CHECK_NAMES)),
            schema=json.dumps(PLAN_PAYLOAD_SCHEMA, sort_keys=True),
            instruction=instruction.strip())
        text = self.complete(prompt, DecodingSpec.for_level(level))
        try:
            return parse_plan_payload(text)
        except SchemaViolation as first:
            repair = prompt + "\n" + text + "\n\n" + REPAIR_PROMPT.format(
                errors="\n".join(first.errors))
            text = self.complete(repair, DecodingSpec.for_level(level, replanning=True))
            return parse_plan_payload(text)


def _completion_text(data) -> str:
    if isinstance(data, dict):
        if isinstance(data.get("text"), str):
            return data["text"]
        if isinstance(data.get("generated_text"), str):
            return data["generated_text"]
        choices = data.get("choices")
        if isinstance(choices, list) and choices:
            c = choices[0]
            if isinstance(c.get("text"), str):
                return c["text"]
            msg = c.get("message") or {}
            if isinstance(msg.get("content"), str):
                return msg["content"]
    if isinstance(data, list) and data and isinstance(data[0], dict):
        return _completion_text(data[0])
    raise EndpointUnavailable("planner response carries no completion text")


def _guess_level(instruction: str, layout) -> str:
    text = _normalize(instruction)
    try:
        level = _detect_level(text, _feature_id(text), layout)
    except Exception:
        level = None
    return level or "polygon"


# ---------------------------------------------------------------------------
# record / replay transport
# ---------------------------------------------------------------------------

class _Reply:
    def __init__(self, status: int, body):
        self.status_code = status
        self._body = body

    def json(self):
        if isinstance(self._body, str):
            return json.loads(self._body)
        return self._body


class ReplayHTTP:
    """Serves recorded responses in order from a JSON-lines fixture.

    Each line is ``{"request": {"prompt_sha256": ..., ...}, "response":
    {"status": 200, "body": {...}}}``. A response may instead be
    ``{"error": "timeout"}`` to simulate a transport failure.
    """

    def __init__(self, path_or_records):
        if isinstance(path_or_records, (str, os.PathLike)):
            with open(path_or_records, encoding="utf-8") as fh:
                self.records = [json.loads(line) for line in fh if line.strip()]
        else:
            self.records = list(path_or_records)
        self.calls: list = []

    def post(self, url, json=None, headers=None, timeout=None):
        if len(self.calls) >= len(self.records):
            raise requests.ConnectionError("replay fixture exhausted")
        rec = self.records[len(self.calls)]
        self.calls.append(json)
        resp = rec["response"]
        if resp.get("error") == "timeout":
            raise requests.Timeout("replayed timeout")
        if resp.get("error"):
            raise requests.ConnectionError(resp["error"])
        return _Reply(resp.get("status", 200), resp.get("body"))


class RecordingHTTP:
    """Wraps a live transport and appends every exchange to a fixture file."""

    def __init__(self, path, http=None):
        self.path = path
        self.http = http if http is not None else requests.Session()

    def post(self, url, json=None, headers=None, timeout=None):
        record = {"request": {"prompt_sha256": hashlib.sha256(
            (json or {}).get("prompt", "").encode()).hexdigest(),
            "decoding": {k: v for k, v in (json or {}).items() if k != "prompt"}}}
        try:
            resp = self.http.post(url, json=json, headers=headers, timeout=timeout)
        except requests.Timeout:
            record["response"] = {"error": "timeout"}
            self._write(record)
            raise
        record["response"] = {"status": resp.status_code, "body": resp.json()}
        self._write(record)
        return resp

    def _write(self, record):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def plan(instruction: str, layout: UrbanLayout | None = None, backend: str = "grammar",
         external: ExternalPlanner | None = None) -> EditPlan:
    if not instruction or not instruction.strip():
        raise UnparseableInstruction("empty instruction")
    if backend == "grammar":
        return parse_structured(instruction, layout)
    if backend == "external":
        return (external or ExternalPlanner()).plan(instruction, layout)
    raise ValueError(f"unknown planner backend {backend!r}")
