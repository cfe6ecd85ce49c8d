"""Write the replay fixtures used to test the external planner offline.

Each fixture is what RecordingHTTP would have captured from an endpoint
that answers with the given completions.
"""
import hashlib
import json
from pathlib import Path

from geoedit.planning import (
    CHECK_NAMES,
    PLAN_PAYLOAD_SCHEMA,
    PLANNER_PROMPT,
    DecodingSpec,
    parse_structured,
    plan_to_payload,
)

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
OUT = ROOT / "planner"


def prompt_for(instruction: str) -> str:
    return PLANNER_PROMPT.format(checks=", ".join(sorted(CHECK_NAMES)),
                                 schema=json.dumps(PLAN_PAYLOAD_SCHEMA, sort_keys=True),
                                 instruction=instruction.strip())


def exchange(prompt: str | None, decoding: DecodingSpec, response: dict) -> dict:
    request = {"decoding": decoding.__dict__}
    if prompt is not None:
        request["prompt_sha256"] = hashlib.sha256(prompt.encode()).hexdigest()
    return {"request": request, "response": response}


def write(name: str, records: list) -> None:
    with open(OUT / name, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    instructions = json.loads((ROOT / "instructions.json").read_text("utf-8"))
    text = instructions["grow_48_preserve"]
    payload = json.dumps(plan_to_payload(parse_structured(text)), sort_keys=True)
    first = DecodingSpec.for_level("polygon")
    repair = DecodingSpec.for_level("polygon", replanning=True)
    ok = {"status": 200, "body": {"choices": [{"text": payload}]}}
    prose = {"status": 200, "body": {"choices": [{"text": "Sure! Here is the plan:\n```json\n"
                                                  + payload + "\n```\nLet me know."}]}}
    write("grow_valid.jsonl", [exchange(prompt_for(text), first, ok)])
    write("grow_prose_then_valid.jsonl", [exchange(prompt_for(text), first, prose),
                                          exchange(None, repair, ok)])
    write("grow_prose_twice.jsonl", [exchange(prompt_for(text), first, prose),
                                     exchange(None, repair, prose)])
    write("timeout.jsonl", [exchange(prompt_for(text), first, {"error": "timeout"})])


if __name__ == "__main__":
    main()
