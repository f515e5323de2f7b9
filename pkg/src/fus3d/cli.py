"""Command-line pipeline: simulate, train, infer, evaluate, compound,
calibrate-baseline.

Every run writes a manifest (config plus seeds, no timestamps) next to
its outputs so runs can be reproduced exactly. Exit codes: 0 success,
1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baseline import (
    DecorrModel,
    calibrate,
    calibration_pairs_from_scan,
    estimate_step,
)
from .compound import compound, write_volume
from .losses import LossWeights
from .metrics import METRICS_CSV_HEADER, evaluate_trajectories
from .network import ModelConfig, MotionNetwork, load_model
from .pose import (
    ImageGeometry,
    accumulate,
    pose_to_transform,
    read_pose_csv,
    write_pose_csv,
)
from .simulate import (
    PhantomSpec,
    ScanSequence,
    TrajectorySpec,
    make_phantom,
    make_trajectory,
    read_scan,
    slice_phantom,
    write_scan,
)
from .training import (
    ScanDataset,
    TrainConfig,
    train,
    validation_report,
)

DEFAULT_PITCH_MM = 0.1484
DEFAULT_FRAME_RATE = 20.0


class UsageError(ValueError):
    """Configuration problems: mapped to exit code 2."""


def _load_config_defaults(path) -> dict:
    """Flat key=value file; keys match argument names (dashes or
    underscores)."""
    defaults = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        defaults[key.strip().replace("-", "_")] = value.strip()
    return defaults


def _ensure_out(path, force: bool, *names) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        target = out / name
        if target.exists() and not force:
            raise UsageError(f"{target} exists; rerun with --force to overwrite")
    return out


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    skip = {"func", "config"}
    path = out_dir / "manifest.json"
    payload = {}
    if path.exists():  # keep container metadata (subject tag etc.)
        payload = json.loads(path.read_text(encoding="utf-8"))
    payload["command"] = command
    payload["arguments"] = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in skip and not callable(v)
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _ensure_out(args.out, args.force, "frames.bin")
    try:
        trajectory_spec = TrajectorySpec(
            shape=args.shape,
            length_mm=args.length_mm,
            n_frames=args.frames,
            lateral_amplitude_mm=args.lateral_amplitude,
            rotation_amplitude_deg=args.rotation_amplitude,
            noise_translation_mm=tuple(args.noise_translation),
            noise_rotation_deg=tuple(args.noise_rotation),
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    geometry = ImageGeometry(
        args.frame_extent, args.frame_extent, args.pitch, args.pitch
    )
    wiggle = args.lateral_amplitude + 4.0 * max(args.noise_translation)
    phantom_spec = PhantomSpec.for_scan(
        geometry,
        scan_length_mm=args.length_mm,
        margin_mm=args.margin + wiggle,
        voxel_mm=args.voxel,
    )
    phantom = make_phantom(phantom_spec, seed=args.seed + 1_000_003)
    trajectory, _ = make_trajectory(trajectory_spec)
    frames = slice_phantom(phantom, trajectory, geometry)
    scan = ScanSequence(
        frames=frames,
        geometry=geometry,
        frame_rate_hz=DEFAULT_FRAME_RATE,
        truth=trajectory,
        subject=args.subject,
        meta={"seed": args.seed, "shape": args.shape},
    )
    write_scan(out, scan, force=True)
    _write_manifest(out, "simulate", args)
    print(f"wrote {scan.n_frames}-frame scan to {out}")
    return 0


# -- train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    out = _ensure_out(args.out, args.force, "checkpoint.ckpt", "train_log.csv")
    dataset = ScanDataset.from_directory(args.dataset)
    if args.val_dataset:
        train_scans = dataset.scans
        val_scans = ScanDataset.from_directory(args.val_dataset).scans
    else:
        train_ds, val_ds = dataset.split_by_subject(args.val_fraction, args.seed)
        train_scans, val_scans = train_ds.scans, val_ds.scans
    if not train_scans or not val_scans:
        raise UsageError("dataset too small for a train/validation split")

    if args.scale == "paper-shape":
        model_config = ModelConfig.paper_shape(seq_len=args.seq_len,
                                               use_gla=not args.no_gla)
        default_batch = 14
    else:
        model_config = ModelConfig.toy(seq_len=args.seq_len,
                                       use_gla=not args.no_gla)
        default_batch = 4
    expected = model_config.frame_extent
    geom = train_scans[0].geometry
    if (geom.n_rows, geom.n_cols) != (expected, expected):
        raise UsageError(
            f"scan frames are {geom.n_rows}x{geom.n_cols} but the "
            f"{args.scale} model expects {expected}x{expected}"
        )

    config = TrainConfig(
        steps=args.steps,
        batch_size=args.batch if args.batch else default_batch,
        seq_len=args.seq_len,
        learning_rate=args.lr,
        loss_weights=LossWeights(args.alpha_mmae, args.alpha_corr,
                                 args.alpha_triplet, args.epsilon),
        seed=args.seed,
        val_every_epochs=args.val_every,
    )

    resume_extra = None
    if args.resume:
        model, resume_extra, _ = load_model(args.resume)
    else:
        model = MotionNetwork(model_config, seed=args.seed)

    result = train(
        model,
        train_scans,
        val_scans,
        config,
        log_path=out / "train_log.csv",
        checkpoint_path=out / "checkpoint.ckpt",
        resume_extra=resume_extra,
    )

    best_path = out / "best_checkpoint.ckpt"
    eval_model = load_model(best_path)[0] if best_path.exists() else model
    report = validation_report(eval_model, val_scans)
    report["init_val_mmae"] = result.init_val_mmae
    report["best_val_mmae"] = result.best_val_mmae
    report["final_val_mmae"] = result.final_val_mmae
    report["steps"] = result.steps_done
    with open(out / "val_report.json", "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
    _write_manifest(out, "train", args)
    print(
        f"trained {result.steps_done} steps; validation mmae "
        f"{result.init_val_mmae:.5f} -> best {result.best_val_mmae:.5f}"
    )
    return 0


# -- infer ---------------------------------------------------------------------

def _write_pose_outputs(out: Path, rel_poses, prefix: str = "pred") -> None:
    write_pose_csv(out / f"{prefix}_relative.csv", rel_poses)
    trajectory = accumulate([pose_to_transform(p) for p in rel_poses])
    write_pose_csv(out / f"{prefix}_absolute.csv", trajectory.poses())


def cmd_infer(args) -> int:
    sources = sum(bool(x) for x in (args.checkpoint, args.baseline,
                                    args.identity_debug))
    if sources != 1:
        raise UsageError(
            "exactly one of --checkpoint, --baseline or --identity-debug "
            "must be given"
        )
    out = _ensure_out(args.out, args.force, "pred_relative.csv")
    scan = read_scan(args.scan)
    if args.identity_debug:
        rel_poses = scan.truth_relative_poses()
    elif args.baseline:
        model = DecorrModel.load_csv(args.baseline)
        pitch = (scan.geometry.pitch_axial_mm, scan.geometry.pitch_lateral_mm)
        rel_poses = [
            estimate_step(scan.frames[i], scan.frames[i + 1], model,
                          pitch_mm=pitch)
            for i in range(scan.n_frames - 1)
        ]
    else:
        model, _, config = load_model(args.checkpoint)
        expected = int(config["frame_extent"])
        if scan.geometry.n_rows != expected:
            raise UsageError(
                f"scan frames are {scan.geometry.n_rows}px but the model "
                f"expects {expected}px"
            )
        rel_poses, scores = model.infer_scan(scan.frames,
                                             diagnostics=args.diagnostics)
        if args.diagnostics:
            from .network import export_attention_scores

            export_attention_scores(scores, out / "attention")
    _write_pose_outputs(out, rel_poses)
    _write_manifest(out, "infer", args)
    print(f"wrote {len(rel_poses)} relative and {len(rel_poses) + 1} "
          f"absolute poses to {out}")
    return 0


# -- evaluate --------------------------------------------------------------------

def _trajectory_from_csv(path) -> list:
    poses = read_pose_csv(path)
    return [pose_to_transform(p) for p in poses]


def cmd_evaluate(args) -> int:
    out = _ensure_out(args.out, args.force, "report.json")
    truth = _trajectory_from_csv(args.truth)
    pred = _trajectory_from_csv(args.pred)
    scan = read_scan(args.scan)
    report, _ = evaluate_trajectories(truth, pred, scan.geometry)
    payload = report.as_json_dict()
    with open(out / "report.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    with open(out / "report.csv", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(METRICS_CSV_HEADER + "\n")
        handle.write(report.csv_row() + "\n")
    _write_manifest(out, "evaluate", args)
    print(json.dumps(payload, sort_keys=True))
    return 0


# -- compound --------------------------------------------------------------------

def cmd_compound(args) -> int:
    out = _ensure_out(args.out, args.force, "volume.fvl")
    scan = read_scan(args.scan)
    poses = read_pose_csv(args.poses)
    if len(poses) != scan.n_frames:
        raise UsageError(
            f"{len(poses)} poses for {scan.n_frames} frames; pass the "
            "absolute pose CSV"
        )
    transforms = [pose_to_transform(p) for p in poses]
    volume = compound(scan.frames, transforms, scan.geometry, args.voxel)
    write_volume(
        out / "volume.fvl",
        volume,
        provenance={"scan": str(args.scan), "source": args.source},
    )
    _write_manifest(out, "compound", args)
    print(f"wrote volume {volume.dims} (occupancy {volume.occupancy:.3f}) to {out}")
    return 0


# -- calibrate-baseline ------------------------------------------------------------

def cmd_calibrate_baseline(args) -> int:
    out = _ensure_out(args.out, args.force, "calibration.csv")
    scan = read_scan(args.scan)
    pairs = calibration_pairs_from_scan(scan, lags=tuple(args.lags))
    model = calibrate(pairs)
    model.save_csv(out / "calibration.csv")
    _write_manifest(out, "calibrate-baseline", args)
    print(f"calibrated {len(model.gap_mm)} knots "
          f"(gaps {model.gap_mm[0]:.3f}..{model.gap_mm[-1]:.3f} mm)")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fus3d",
        description="Sensorless freehand 3D ultrasound reconstruction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--config", type=Path, default=None,
                       help="flat key=value file with argument defaults")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p = sub.add_parser("simulate", help="generate a synthetic speckle scan")
    common(p)
    p.add_argument("--shape", choices=["linear", "s_curve", "c_curve"],
                   default="linear")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--length-mm", type=float, default=10.0)
    p.add_argument("--lateral-amplitude", type=float, default=0.0)
    p.add_argument("--rotation-amplitude", type=float, default=0.0)
    p.add_argument("--noise-translation", type=float, nargs=3,
                   default=[0.0, 0.0, 0.0], metavar=("SX", "SY", "SZ"))
    p.add_argument("--noise-rotation", type=float, nargs=3,
                   default=[0.0, 0.0, 0.0], metavar=("SX", "SY", "SZ"))
    p.add_argument("--frame-extent", type=int, default=64)
    p.add_argument("--pitch", type=float, default=DEFAULT_PITCH_MM)
    p.add_argument("--voxel", type=float, default=0.10,
                   help="phantom voxel size (mm)")
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--subject", default="s00")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the motion network")
    common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--val-dataset", type=Path, default=None)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=0,
                   help="batch size (default 4 toy / 14 paper-shape)")
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha-mmae", type=float, default=1.0)
    p.add_argument("--alpha-corr", type=float, default=0.5)
    p.add_argument("--alpha-triplet", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--val-every", type=int, default=10,
                   help="validate every N epochs")
    p.add_argument("--scale", choices=["toy", "paper-shape"], default="toy")
    p.add_argument("--no-gla", action="store_true",
                   help="replace the attention block with plain pooling")
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="estimate scan motion")
    common(p)
    p.add_argument("--scan", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--baseline", type=Path, default=None,
                   help="decorrelation calibration CSV")
    p.add_argument("--identity-debug", action="store_true",
                   help="pipe ground-truth relatives through the "
                        "accumulate/extract path")
    p.add_argument("--diagnostics", action="store_true",
                   help="export attention-score grids")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="compare predicted and true poses")
    common(p)
    p.add_argument("--truth", type=Path, required=True,
                   help="ground-truth absolute pose CSV")
    p.add_argument("--pred", type=Path, required=True,
                   help="predicted absolute pose CSV")
    p.add_argument("--scan", type=Path, required=True,
                   help="scan directory (for frame geometry)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compound", help="splat frames into a voxel volume")
    common(p)
    p.add_argument("--scan", type=Path, required=True)
    p.add_argument("--poses", type=Path, required=True,
                   help="absolute pose CSV to compound along")
    p.add_argument("--voxel", type=float, default=DEFAULT_PITCH_MM)
    p.add_argument("--source", choices=["truth", "predicted", "baseline"],
                   default="truth")
    p.set_defaults(func=cmd_compound)

    p = sub.add_parser("calibrate-baseline",
                       help="fit the NCC-vs-distance lookup from a scan")
    common(p)
    p.add_argument("--scan", type=Path, required=True)
    p.add_argument("--lags", type=int, nargs="+", default=[1, 2, 4, 6, 8, 10])
    p.set_defaults(func=cmd_calibrate_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_config_defaults(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _apply_config_defaults(parser, argv) -> None:
    if "--config" in argv:
        probe, _ = parser.parse_known_args(argv)
        if probe.config:
            defaults = _load_config_defaults(probe.config)
            subparser = parser._subparsers._group_actions[0].choices[probe.command]
            typed = {}
            for action in subparser._actions:
                if action.dest in defaults:
                    raw = defaults[action.dest]
                    if action.nargs in ("+", 3):
                        typed[action.dest] = [
                            (action.type or str)(v) for v in raw.split(",")
                        ]
                    elif isinstance(action.const, bool) or isinstance(
                        action.default, bool
                    ):
                        typed[action.dest] = raw.lower() in ("1", "true", "yes")
                    else:
                        typed[action.dest] = (action.type or str)(raw)
            unknown = set(defaults) - {a.dest for a in subparser._actions}
            if unknown:
                raise UsageError(
                    f"unknown config keys: {', '.join(sorted(unknown))}"
                )
            subparser.set_defaults(**typed)


if __name__ == "__main__":
    sys.exit(main())
