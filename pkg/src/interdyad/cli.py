"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, bad values, failed
check), 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, io
from .alignment import TrainingError, gradcheck, linear_task
from .curation import CurationThresholds, iter_jsonl, run_pipeline
from .guidance import GuidanceConfig
from .metrics import DEFAULT_DELTA
from .pipeline import (
    Manifest,
    dump_guidance,
    evaluate_clip,
    parse_segment_records,
    run_demo,
    train_alignment,
    write_alignment_data,
    write_report,
)
from .scene import ConfigError, load_scene

log = logging.getLogger("interdyad")

GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="interdyad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for record/clip processing")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("curate", help="run the clip curation cascade over JSONL records")
    c.add_argument("--in", dest="inp", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("eval", help="DI-Sync / DI-Sali report")
    e.add_argument("--scene", type=Path)
    e.add_argument("--segments", required=True, type=Path)
    e.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    e.add_argument("--normalize", action="store_true", help="normalise DI-Sali by eye span")
    e.add_argument("--out", required=True, type=Path)

    t = sub.add_parser("train-align", help="train the temporal connector")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, help="output directory (default: --data)")
    t.add_argument("--synthetic", action="store_true", help="first write a synthetic linear task into --data")

    g = sub.add_parser("gradcheck", help="audit connector gradients against finite differences")
    g.add_argument("--instances", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("guide-dump", help="write role-aware CFG scale fields for a scene")
    d.add_argument("--scene", required=True, type=Path)
    d.add_argument("--cfg", type=Path)
    d.add_argument("--out", required=True, type=Path)

    m = sub.add_parser("demo", help="end-to-end synthetic run")
    m.add_argument("--seed", type=int, default=7)
    m.add_argument("--frames", type=int, default=153)
    m.add_argument("--out", required=True, type=Path)
    return p


def _setup_logging() -> None:
    level = os.environ.get("INTERDYAD_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def cmd_curate(args) -> int:
    man = Manifest("curate", {"thresholds": CurationThresholds().__dict__, "jobs": args.jobs}, None, {"in": str(args.inp)})
    report = run_pipeline(iter_jsonl(args.inp), CurationThresholds(), jobs=args.jobs)
    lines = "".join(json.dumps(d, sort_keys=True) + "\n" for d in report.decisions)
    io.atomic_write_bytes(args.out / "decisions.jsonl", lines.encode())
    io.write_json(args.out / "summary.json", report.summary)
    man.add_output("decisions.jsonl")
    man.add_output("summary.json")
    man.write(args.out / "manifest.json")
    print(json.dumps(report.summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    records = parse_segment_records(io.read_json(args.segments))
    scenes = {}
    default_scene = load_scene(args.scene) if args.scene else None

    def scene_for(rec):
        if rec["scene"]:
            path = args.segments.parent / rec["scene"]
            if path not in scenes:
                scenes[path] = load_scene(path)
            return scenes[path]
        return default_scene

    rows = [
        evaluate_clip(r["clip_id"], r["audio"], r["video"], args.delta, scene_for(r), args.normalize)
        for r in sorted(records, key=lambda r: r["clip_id"])
    ]
    agg = write_report(args.out, rows)
    man = Manifest(
        "eval",
        {"delta": args.delta, "normalize": args.normalize},
        None,
        {"segments": str(args.segments), "scene": str(args.scene) if args.scene else None},
    )
    man.add_output(args.out.name)
    man.add_output(agg.name)
    man.write(args.out.with_name(args.out.name + ".manifest.json"))
    for r in rows:
        print(f"{r['clip_id']}: di_sync={r['di_sync']:.6f} di_sali={r['di_sali']}")
    return 0


def cmd_train_align(args) -> int:
    out = args.out or args.data
    if args.synthetic:
        write_alignment_data(args.data, linear_task(args.seed))
    if not (args.data / "manifest.json").exists():
        raise FileNotFoundError(f"{args.data / 'manifest.json'} not found")
    man = Manifest("train-align", {"steps": args.steps, "lr": args.lr}, args.seed, {"data": str(args.data)})
    for name in train_alignment(args.data, out, args.steps, args.lr, args.seed):
        man.add_output(name)
    man.write(out / "train_manifest.json")
    return 0


def cmd_gradcheck(args) -> int:
    err = gradcheck(args.instances, seed=args.seed)
    ok = err < GRADCHECK_TOL
    print(f"max relative error: {err:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def cmd_guide_dump(args) -> int:
    cfg = GuidanceConfig.from_dict(io.read_json(args.cfg)) if args.cfg else GuidanceConfig()
    scene = load_scene(args.scene)
    man = Manifest("guide-dump", cfg.__dict__, None, {"scene": str(args.scene), "cfg": str(args.cfg) if args.cfg else None})
    for name in dump_guidance(scene, cfg, args.out):
        man.add_output(name)
    man.write(args.out / "manifest.json")
    return 0


def cmd_demo(args) -> int:
    man = Manifest("demo", {"frames": args.frames}, args.seed, {})
    summary = run_demo(args.seed, args.out, frames=args.frames)
    for name in summary["files"]:
        man.add_output(name)
    man.write(args.out / "manifest.json")
    ok = all(b["context_bit_equal"] for b in summary["boundaries"])
    m = summary["metrics"]
    print(f"demo seed={args.seed}: di_sync={m['di_sync']:.4f} di_sali={m['di_sali']:.4f} boundaries_ok={ok}")
    return 0 if ok else 1


COMMANDS = {
    "curate": cmd_curate,
    "eval": cmd_eval,
    "train-align": cmd_train_align,
    "gradcheck": cmd_gradcheck,
    "guide-dump": cmd_guide_dump,
    "demo": cmd_demo,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.jobs < 1:
        print("interdyad: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"interdyad: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ConfigError, TrainingError, KeyError) as exc:
        print(f"interdyad: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
