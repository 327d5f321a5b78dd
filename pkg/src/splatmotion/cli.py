"""Command-line entry point: ``splatmotion <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .avatar import PosePrior, load_default_avatar
from .camera_track import load_trajectory
from .motion import MotionSequence
from .pipeline import (
    PipelineConfig,
    PipelineError,
    chain_sequences,
    prepare,
    run_pipeline,
    stage_evaluate,
    stage_reconstruct,
    stage_refine,
    stage_select_view,
    stage_track_camera,
    write_debug_renders,
    write_manifest,
)
from .synth import box_object, oracle_camera, reach_and_lift, room_scene, synth_oracle

log = logging.getLogger("splatmotion")


def _config(args: argparse.Namespace) -> PipelineConfig:
    if not args.config:
        raise PipelineError("config", "--config is required for this subcommand")
    try:
        cfg = PipelineConfig.load(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise PipelineError("config", str(exc)) from exc
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.debug_renders:
        changes["debug_renders"] = True
    return cfg.replace(**changes) if changes else cfg


def _checkpoint(path: Path, stage: str, producer: str) -> Path:
    if not path.exists():
        raise PipelineError(stage, f"missing {path.name}; run `{producer}` first")
    return path


def cmd_synth(args: argparse.Namespace) -> None:
    """Write a synthetic oracle clip plus a ready-to-run config."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    template = load_default_avatar()
    prior = PosePrior.build(seed=args.seed if args.seed is not None else 0)
    scene = room_scene()
    obj = None if args.no_object else box_object()
    truth = reach_and_lift(template.skeleton, prior, args.start, args.frames, oracle_camera(args.size, args.size))
    if obj is None:
        truth = MotionSequence(tuple(f.__class__(f.camera, f.human, None) for f in truth.frames), truth.metadata)
    scene.save_json(out / "scene.json")
    (out / "prior.json").write_text(json.dumps(prior.to_dict()))
    sdf = {"type": "union", "parts": [
        {"type": "plane", "point": [0, 0, 0], "normal": [0, 0, 1]},
        {"type": "plane", "point": [0, 3.5, 0], "normal": [0, -1, 0]},
        {"type": "plane", "point": [-3.5, 0, 0], "normal": [1, 0, 0]},
        {"type": "plane", "point": [3.5, 0, 0], "normal": [-1, 0, 0]},
    ]}
    (out / "scene_sdf.json").write_text(json.dumps(sdf, indent=1))
    config = {
        "scene": "scene.json", "frames": "frames", "output": "run", "init": "init.json", "prior": "prior.json",
        "scenario": "static" if obj is None else "dynamic", "seed": args.seed or 0,
        "metrics": {"scene_sdf": "scene_sdf.json"},
    }
    if obj is not None:
        obj.save_json(out / "object.json")
        (out / "object_sdf.json").write_text(json.dumps({"type": "box", "half": [0.15, 0.15, 0.15]}))
        config["object"] = "object.json"
        config["metrics"]["object_sdf"] = "object_sdf.json"
    synth_oracle(out, scene, template, obj, truth)
    (out / "config.json").write_text(json.dumps(config, indent=1))
    print(f"wrote {len(truth)} frames to {out / 'frames'}; run with --config {out / 'config.json'}")


def cmd_select_view(args: argparse.Namespace) -> None:
    ctx = prepare(_config(args))
    cam = stage_select_view(ctx)
    print(f"selected camera at {cam.center.round(3).tolist()} -> {ctx.path('select-view')}")


def cmd_track_camera(args: argparse.Namespace) -> None:
    ctx = prepare(_config(args))
    camera = ctx.initial.camera
    view = ctx.path("select-view")
    if ctx.config.select_view:
        from .geometry import Camera

        camera = Camera.from_dict(json.loads(_checkpoint(view, "track-camera", "select-view").read_text())["camera"])
    cams = stage_track_camera(ctx, camera)
    print(f"tracked {len(cams)} cameras -> {ctx.path('track-camera')}")


def cmd_reconstruct(args: argparse.Namespace) -> None:
    ctx = prepare(_config(args))
    cams = load_trajectory(_checkpoint(ctx.path("track-camera"), "reconstruct", "track-camera"))
    motion = stage_reconstruct(ctx, cams)
    print(f"reconstructed {len(motion)} frames -> {ctx.path('reconstruct')}")


def cmd_refine(args: argparse.Namespace) -> None:
    ctx = prepare(_config(args))
    raw = MotionSequence.load_json(_checkpoint(ctx.path("reconstruct"), "refine", "reconstruct"))
    motion = stage_refine(ctx, raw)
    print(f"refined {len(motion)} frames -> {ctx.path('refine')}")


def cmd_evaluate(args: argparse.Namespace) -> None:
    ctx = prepare(_config(args))
    path = Path(args.motion) if args.motion else _checkpoint(ctx.path("refine"), "evaluate", "refine")
    motion = MotionSequence.load_json(path)
    report = stage_evaluate(ctx, motion)
    if ctx.config.debug_renders:
        write_debug_renders(ctx, motion)
    write_manifest(ctx)
    print(report.table())


def cmd_run(args: argparse.Namespace) -> None:
    result = run_pipeline(_config(args))
    print(result.report.table())
    print(f"outputs in {result.out}")


def cmd_chain(args: argparse.Namespace) -> None:
    cfg = _config(args)
    try:
        previous = MotionSequence.load_json(args.previous)
    except (OSError, ValueError, KeyError) as exc:
        raise PipelineError("chain", f"cannot read previous sequence: {exc}") from exc
    chained = chain_sequences(previous, cfg)
    out = Path(cfg.output) / "chained_motion.json"
    chained.save_json(out)
    print(f"chained {len(previous)} + {len(chained) - len(previous)} frames -> {out}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--debug-renders", action="store_true", help="write renders of the result per frame")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="splatmotion", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="render a synthetic oracle clip")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=51)
    s.add_argument("--start", type=int, default=0, help="first script frame")
    s.add_argument("--size", type=int, default=128, help="image width and height")
    s.add_argument("--no-object", action="store_true", help="static scenario without the box")
    s.set_defaults(func=cmd_synth)
    for name, func, text in (
        ("select-view", cmd_select_view, "pick the initial camera from a camera array"),
        ("track-camera", cmd_track_camera, "track the camera through the frames"),
        ("reconstruct", cmd_reconstruct, "fit human and object pose per frame"),
        ("refine", cmd_refine, "refine the reconstructed motion"),
        ("run", cmd_run, "all stages"),
    ):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)
    e = sub.add_parser("evaluate", parents=[common], help="compute plausibility metrics")
    e.add_argument("--motion", help="motion JSON (default: the refined motion in the output directory)")
    e.set_defaults(func=cmd_evaluate)
    c = sub.add_parser("chain", parents=[common], help="continue a refined sequence with the next clip")
    c.add_argument("--previous", required=True, help="refined motion JSON of the previous clip(s)")
    c.set_defaults(func=cmd_chain)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
