"""Command-line entry point: edit, evaluate, gen-corpus and render.

Exit status is 0 for a valid run, 1 for usage, input or planning errors
and 2 when execution fails (a subtask exhausted its retries).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import (
    FilterConfig,
    PatchSpec,
    fetch_patch,
    filter_patch,
    gen_tasks,
    read_manifest,
    write_manifest,
)
from .errors import EmptyCorpus, GeoEditError, SessionFailed
from .evaluate import evaluate_tasks
from .execution import FaultSpec, SessionConfig, run_session
from .metrics import report
from .model import GeoCoord, load_layout, round_layout, save_layout
from .planning import plan, validate_plan
from .render import render_svg

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _retry_range(text: str) -> range:
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad retry range {text!r}")
    return range(lo, hi + 1)


def _latlon(text: str) -> GeoCoord:
    try:
        lat, lon = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LAT,LON, got {text!r}") from None
    return GeoCoord(lon, lat)


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geoedit", description="Instruction-driven editing of urban map layouts.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("edit", help="apply one instruction to a layout")
    e.add_argument("--layout", required=True, help="input GeoJSON FeatureCollection")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--instruction", help="instruction text")
    src.add_argument("--instruction-file", help="file holding the instruction text")
    e.add_argument("--out", required=True, help="where to write the edited GeoJSON")
    e.add_argument("--planner", choices=("grammar", "external"), default="grammar",
                   help="planning backend (default: grammar)")
    e.add_argument("--retries", type=_nonneg_int, default=3, help="retry budget R per subtask")
    e.add_argument("--seed", type=int, default=0, help="seed for fault injection")
    e.add_argument("--fault", type=float, default=0.0, help="fault probability per attempt")
    e.add_argument("--trace", help="write attempt records (JSON lines) here")
    e.add_argument("--plan-out", help="write the plan as JSON here")
    e.add_argument("--render", help="write a before/after SVG here")

    v = sub.add_parser("evaluate", help="run a task manifest and report metrics")
    v.add_argument("--manifest", required=True, help="task manifest (JSON lines)")
    v.add_argument("--out", required=True, help="report text file; a .json twin is written too")
    v.add_argument("--planner", choices=("grammar", "external"), default="grammar",
                   help="planning backend (default: grammar)")
    v.add_argument("--retries", type=_nonneg_int, default=3, help="retry budget R per subtask")
    v.add_argument("--fault", type=float, default=0.0, help="fault probability per attempt")
    v.add_argument("--seed", type=int, default=0, help="base seed for fault injection")
    v.add_argument("--sweep-retries", type=_retry_range, metavar="LO..HI",
                   help="evaluate once per R in the range, one report each")
    v.add_argument("--limit", type=_nonneg_int, help="only the first N tasks")
    v.add_argument("--workers", type=_nonneg_int, default=0,
                   help="worker processes (default: CPU count)")

    g = sub.add_parser("gen-corpus", help="generate labeled tasks for one patch")
    where = g.add_mutually_exclusive_group(required=True)
    where.add_argument("--layout", help="existing GeoJSON layout")
    where.add_argument("--fetch", type=_latlon, metavar="LAT,LON",
                       help="fetch a patch centered here from Overpass")
    g.add_argument("--size-m", type=float, default=1000.0, help="patch side length for --fetch")
    g.add_argument("--min-features", type=_nonneg_int, default=20,
                   help="reject fetched patches with fewer features")
    g.add_argument("--level", choices=("point", "line", "polygon"), required=True,
                   help="task level")
    g.add_argument("--count", type=_nonneg_int, required=True, help="number of tasks")
    g.add_argument("--seed", type=int, default=0, help="sampling seed")
    g.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("render", help="draw before/after panels as SVG")
    r.add_argument("--before", required=True, help="layout before the edit")
    r.add_argument("--after", required=True, help="layout after the edit")
    r.add_argument("--out", required=True, help="SVG output path")
    r.add_argument("--trace", help="attempt records; the green area change is read from here")
    return parser


def _config(args) -> SessionConfig:
    fault = FaultSpec(args.fault) if args.fault else None
    return SessionConfig(retry_R=args.retries, planner_backend=args.planner,
                         fault=fault, seed=args.seed)


def cmd_edit(args) -> int:
    layout = load_layout(args.layout)
    if args.instruction_file:
        try:
            text = Path(args.instruction_file).read_text("utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read instruction file: {exc}") from None
    else:
        text = args.instruction
    edit_plan = plan(text, layout, args.planner)
    check = validate_plan(edit_plan, layout)
    if args.plan_out:
        Path(args.plan_out).write_text(edit_plan.to_json() + "\n", "utf-8")
    if not check.ok:
        raise UsageError("plan rejected: " + "; ".join(f"{k} {v}" for k, v in check.issues))
    status = EXIT_OK
    try:
        result, summary = run_session(layout, edit_plan, _config(args))
    except SessionFailed as exc:
        result, summary, status = exc.layout, exc.summary, EXIT_INVALID
        print(f"geoedit: {exc}", file=sys.stderr)
    save_layout(result, args.out)
    if args.trace:
        Path(args.trace).write_text(summary.to_jsonl(), "utf-8")
    if args.render:
        poly = summary.final_metrics_inputs.get("polygon") or {}
        delta = poly.get("achieved_delta_area_m2") if poly.get("accepted") else None
        # draw what was written so a later `render` of the files gives the same bytes
        Path(args.render).write_text(render_svg(layout, round_layout(result), delta), "utf-8")
    print(edit_plan.intent_summary)
    return status


def _write_report(rep, out: Path):
    out.write_text(rep.to_text(), "utf-8")
    out.with_suffix(".json").write_text(rep.to_json() + "\n", "utf-8")


def cmd_evaluate(args) -> int:
    manifest = Path(args.manifest)
    try:
        tasks = read_manifest(manifest)
    except OSError as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None
    if args.limit is not None:
        tasks = tasks[:args.limit]
    if not tasks:
        raise EmptyCorpus("manifest holds no tasks")
    out = Path(args.out)
    sweep = args.sweep_retries or [args.retries]
    for R in sweep:
        args.retries = R
        results = evaluate_tasks(tasks, manifest.parent, _config(args), workers=args.workers or None)
        rep = report(results, meta={"manifest": manifest.name, "retries": R,
                                    "fault": args.fault, "seed": args.seed,
                                    "planner": args.planner})
        target = out if args.sweep_retries is None else out.with_name(
            f"{out.stem}.R{R}{out.suffix}")
        _write_report(rep, target)
        print(f"R={R}")
        print(rep.to_text(), end="")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.fetch is not None:
        spec = PatchSpec(args.fetch, args.size_m)
        raw = fetch_patch(spec, "overpass", cache_dir=out / "cache")
        (out / "raw.json").write_text(raw, "utf-8")
        layout = filter_patch(raw, FilterConfig(min_feature_count=args.min_features))
    else:
        layout = load_layout(args.layout)
    save_layout(layout, out / "layout.geojson")
    tasks = gen_tasks(layout, args.level, args.count, args.seed, layout_ref="layout.geojson")
    write_manifest(tasks, out / "tasks.jsonl")
    print(f"{len(tasks)} {args.level} tasks written to {out / 'tasks.jsonl'}")
    return EXIT_OK


def cmd_render(args) -> int:
    before, after = load_layout(args.before), load_layout(args.after)
    delta = None
    if args.trace:
        for line in Path(args.trace).read_text("utf-8").splitlines():
            rec = json.loads(line)
            if rec.get("record") == "summary":
                poly = rec["final_metrics_inputs"].get("polygon") or {}
                if poly.get("accepted"):
                    delta = poly.get("achieved_delta_area_m2")
    Path(args.out).write_text(render_svg(before, after, delta), "utf-8")
    return EXIT_OK


COMMANDS = {"edit": cmd_edit, "evaluate": cmd_evaluate,
            "gen-corpus": cmd_gen_corpus, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, GeoEditError, OSError, ValueError) as exc:
        print(f"geoedit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
