"""Command-line entry point.

    depthwin <subcommand> [--config path] [--set key=value]... [--out dir] [--seed N]

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io as dio
from .errors import DegenerateOverlapError, DepthwinError, FormatError, InvalidArgumentError, InvalidSceneError
from .geometry import invert, pose_to_se3, poses_to_window, se3_to_pose
from .losses import LossConfig, total_loss
from .metrics import DEPTH_COLUMNS, DepthMetrics, Trajectory, ate_report, depth_metrics, median_scale
from .optim import OptimConfig, optimize_window
from .plotting import PLOTS, plot
from .slam_init import InitConfig, OracleDepth, init_table_csv, initialize
from .synthetic import INIT_SCENES, SceneSpec, init_sequence, render_window, sensor_depth


class UsageError(DepthwinError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    out: Path | None = None
    seed: int | None = None
    settings: dict = field(default_factory=dict)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None


def run_config(args) -> RunConfig:
    settings = {}
    if args.config:
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        settings.update(_flatten(cfg))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = _parse_value(value)
    out = Path(args.out) if args.out else None
    return RunConfig(args.command, out, args.seed, settings)


def _split(settings, sections, extra=()):
    """Route ``section.field`` (or a bare field name, when unambiguous) keys
    to dataclass sections; ``extra`` lists free-standing keys."""
    routed = {name: {} for name in sections}
    free = {}
    for key, value in settings.items():
        if key in extra:
            free[key] = value
            continue
        head, dot, tail = key.partition(".")
        if dot and head in sections:
            target, name = head, tail
        else:
            owners = [s for s, cls in sections.items() if key in {f.name for f in fields(cls)}]
            if len(owners) != 1:
                raise UsageError(f"unknown config key {key!r}")
            target, name = owners[0], key
        if name not in {f.name for f in fields(sections[target])}:
            raise UsageError(f"unknown config key {key!r}")
        routed[target][name] = value
    built = {}
    for name, cls in sections.items():
        try:
            built[name] = cls(**routed[name])
        except TypeError as e:
            raise UsageError(f"bad {name} settings: {e}") from None
    return built, free


def _out_dir(rc: RunConfig, required=True):
    if rc.out is None:
        if required:
            raise UsageError(f"{rc.subcommand} needs --out")
        return None
    rc.out.mkdir(parents=True, exist_ok=True)
    return rc.out


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path):
    if not Path(path).is_file():
        raise UsageError(f"missing file: {path}")
    return path


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        if d.get(k) is None:
            d[k] = {}
        d = d[k]
        if not isinstance(d, dict):
            raise UsageError(f"cannot set {dotted!r}")
    d[keys[-1]] = value


def cmd_synth(args, rc: RunConfig) -> int:
    spec_d = _load_json(_require(args.spec))
    if not isinstance(spec_d, dict):
        raise UsageError(f"{args.spec}: scene spec must be a JSON object")
    for key, value in rc.settings.items():
        _set_path(spec_d, key, value)
    if rc.seed is not None:
        _set_path(spec_d, "texture.seed", rc.seed)
    try:
        spec = SceneSpec.from_dict(spec_d)
    except TypeError as e:
        raise UsageError(f"bad scene spec: {e}") from None
    cam_to_world = dio.read_poses(_require(args.poses))
    if not 2 <= len(cam_to_world) <= 16:
        raise UsageError(f"{args.poses}: need 2..16 poses, got {len(cam_to_world)}")
    out = _out_dir(rc)
    frames, adjacent = render_window(spec, [invert(pose_to_se3(p)) for p in cam_to_world])
    divisor = dio.depth_divisor_for(np.stack([f.depth for f in frames]))
    images, depths, sensors = [], [], []
    for i, f in enumerate(frames):
        images.append(f"image_{i:03d}.pgm")
        depths.append(f"depth_{i:03d}.pgm")
        dio.write_image(out / images[-1], f.image, maxval=65535)
        dio.write_depth(out / depths[-1], f.depth, divisor)
        if spec.sensor is not None:
            sensors.append(f"sensor_depth_{i:03d}.pgm")
            dio.write_depth(out / sensors[-1], sensor_depth(f, spec.sensor, i), divisor)
    traj = Trajectory.from_poses([invert(f.pose) for f in frames])
    dio.write_trajectory(out / "groundtruth.txt", traj)
    dio.write_poses(out / "relative_poses_gt.txt", [se3_to_pose(T) for T in adjacent])
    (out / "scene.json").write_text(spec.to_json() + "\n")
    manifest = dio.WindowManifest(
        images=images,
        intrinsics=spec.K,
        depths=depths,
        sensor_depths=sensors or None,
        trajectory="groundtruth.txt",
        depth_divisor=divisor,
    )
    dio.write_manifest(out / "manifest.json", manifest)
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def _read_frames(manifest):
    return [dio.read_image(_require(p)) for p in manifest.images]


def cmd_optimize(args, rc: RunConfig) -> int:
    manifest = dio.read_manifest(_require(args.manifest))
    built, free = _split(rc.settings, {"loss": LossConfig, "optim": OptimConfig}, extra=("init_depth",))
    loss_cfg, opt_cfg = built["loss"], built["optim"]
    if rc.seed is not None:
        opt_cfg.seed = rc.seed
    init_depth = float(free.get("init_depth", 1.0))
    frames = _read_frames(manifest)
    out = _out_dir(rc)
    K = manifest.intrinsics
    summary = {
        "seed": opt_cfg.seed,
        "n": manifest.n,
        "loss": asdict(loss_cfg),
        "optim": asdict(opt_cfg),
        "init_depth": init_depth,
    }
    depth, poses, trace = optimize_window(frames, K, init_depth, None, loss_cfg, opt_cfg)
    finite = trace.losses()[np.isfinite(trace.losses())]
    summary["steps"] = len(trace.records)
    summary["termination"] = trace.reason
    summary["initial_loss"] = float(finite[0]) if len(finite) else None
    try:
        final = total_loss(frames, depth, poses_to_window(poses), K, loss_cfg)
        summary["final_loss"] = final.total
        (out / "final_breakdown.csv").write_text(final.to_csv())
    except DegenerateOverlapError as e:
        summary["final_loss"] = None
        summary["degenerate"] = {"message": str(e), "scale": e.scale, "pairs": [list(p) for p in e.pairs]}
    divisor = dio.depth_divisor_for(depth)
    summary["depth_divisor"] = divisor
    dio.write_depth(out / "depth.pgm", depth, divisor)
    np.save(out / "depth.npy", depth)
    dio.write_poses(out / "poses.txt", poses)
    window = poses_to_window(poses)
    traj = Trajectory.from_poses([invert(window.relative(0, i)) for i in range(manifest.n)])
    dio.write_trajectory(out / "trajectory.txt", traj)
    (out / "trace.csv").write_text(trace.to_csv(loss_cfg.num_scales))
    _dump(out / "summary.json", summary)
    print(f"termination={trace.reason} steps={summary['steps']} initial={summary['initial_loss']} final={summary['final_loss']}")
    return 1 if summary["initial_loss"] is None else 0


def _depth_files(d):
    d = Path(d)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    return sorted(d.glob("*.pgm"))


def cmd_eval_depth(args, rc: RunConfig) -> int:
    opts = {"cap": 80.0, "divisor": dio.TUM_DEPTH_DIVISOR}
    for k, v in rc.settings.items():
        if k not in opts:
            raise UsageError(f"unknown config key {k!r}")
        opts[k] = float(v)
    preds, gts = _depth_files(args.pred), _depth_files(args.gt)
    if not gts or len(preds) != len(gts):
        raise UsageError(f"need matching non-empty depth sets, got {len(preds)} predictions and {len(gts)} references")
    rows = []
    for p, g in zip(preds, gts):
        pred = dio.read_depth(p, opts["divisor"])
        gt = dio.read_depth(g, opts["divisor"])
        mask = (gt > 0) & (pred > 0)
        rows.append((p.name, depth_metrics(pred * median_scale(pred, gt, mask), gt, mask, cap=opts["cap"])))
    mean = DepthMetrics.mean(m for _, m in rows)
    print(" ".join(f"{c:>8}" for c in DEPTH_COLUMNS))
    print(" ".join(f"{x:8.3f}" for x in mean.as_row()))
    out = _out_dir(rc, required=False)
    if out is not None:
        lines = ["image," + ",".join(DEPTH_COLUMNS)]
        lines += [name + "," + ",".join(f"{x:.9f}" for x in m.as_row()) for name, m in rows]
        lines.append("mean," + ",".join(f"{x:.9f}" for x in mean.as_row()))
        (out / "depth_metrics.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_eval_ate(args, rc: RunConfig) -> int:
    opts = {"n": 5, "max_dt": 0.02}
    for k, v in rc.settings.items():
        if k not in opts:
            raise UsageError(f"unknown config key {k!r}")
        opts[k] = v
    pred = dio.read_trajectory(_require(args.pred))
    gt = dio.read_trajectory(_require(args.gt))
    report = ate_report(pred, gt, n=int(opts["n"]), max_dt=float(opts["max_dt"]))
    print(report)
    out = _out_dir(rc, required=False)
    if out is not None:
        (out / "ate.csv").write_text(report.to_csv())
    return 0


def cmd_init_sim(args, rc: RunConfig) -> int:
    built, free = _split(rc.settings, {"init": InitConfig}, extra=("scene", "frames"))
    cfg = built["init"]
    seed = rc.seed if rc.seed is not None else 0
    if args.manifest:
        manifest = dio.read_manifest(_require(args.manifest))
        if manifest.depths is None:
            raise UsageError(f"{args.manifest}: the fallback provider needs 'depths'")
        images = _read_frames(manifest)
        div = manifest.depth_divisor
        depths = [dio.read_depth(_require(p), div) for p in manifest.depths]
        sensors = [dio.read_depth(_require(p), div) for p in manifest.sensor_depths] if manifest.sensor_depths else [None] * len(images)
        K, scene = manifest.intrinsics, Path(args.manifest).stem
    else:
        scene = free.get("scene", "rich")
        if scene not in INIT_SCENES:
            raise UsageError(f"unknown scene {scene!r}; expected one of {INIT_SCENES}")
        seq = init_sequence(scene, n=int(free.get("frames", 20)), seed=seed)
        images, depths, sensors, K = seq.images, seq.depths, seq.sensor_depths, seq.spec.K
    base = initialize(images, sensors, None, cfg, K)
    fall = initialize(images, sensors, OracleDepth(depths), cfg, K)
    print(f"{scene}: frames-to-initialize without fallback={base.frames_consumed} with fallback={fall.frames_consumed}")
    out = _out_dir(rc, required=False)
    if out is not None:
        (out / "init_baseline.json").write_text(base.to_json() + "\n")
        (out / "init_fallback.json").write_text(fall.to_json() + "\n")
        (out / "init.csv").write_text(init_table_csv(scene, base, fall))
    return 0


def cmd_plot(args, rc: RunConfig) -> int:
    if rc.settings:
        raise UsageError(f"unknown config keys {sorted(rc.settings)}")
    plot(_require(args.csv), args.svg, args.kind)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed recorded in outputs")
    p = argparse.ArgumentParser(prog="depthwin", description="Windowed photometric depth and pose estimation.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="render a synthetic window")
    s.add_argument("spec")
    s.add_argument("poses")
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("optimize", parents=[common], help="optimise depth and poses for a window")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_optimize)
    s = sub.add_parser("eval-depth", parents=[common], help="median-scaled depth metrics")
    s.add_argument("pred")
    s.add_argument("gt")
    s.set_defaults(func=cmd_eval_depth)
    s = sub.add_parser("eval-ate", parents=[common], help="snippet ATE between TUM trajectories")
    s.add_argument("pred")
    s.add_argument("gt")
    s.set_defaults(func=cmd_eval_ate)
    s = sub.add_parser("init-sim", parents=[common], help="frames needed to initialise, with and without fallback")
    s.add_argument("manifest", nargs="?")
    s.set_defaults(func=cmd_init_sim)
    s = sub.add_parser("plot", parents=[common], help="render a CSV as SVG")
    s.add_argument("csv")
    s.add_argument("svg")
    s.add_argument("--kind", choices=sorted(PLOTS), default="loss-curve")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args, run_config(args))
    except (UsageError, InvalidArgumentError, InvalidSceneError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 2
    except (DepthwinError, ArithmeticError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
