"""Command-line entry point.

Subcommands: simulate, gen-data, calibrate, train, eval. Every command is
deterministic given its flags and seed, and echoes its effective
configuration into the output directory. Exit codes: 0 success, 2 usage,
3 data error, 4 numerical failure. SPINSIGHT_THREADS caps the worker pool
used for per-trajectory calibration during evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields
from dataclasses import replace

import numpy as np

from . import __version__, datagen, metrics, physics, spt, svgplot
from . import camera as camera_mod
from .errors import DataError, NumericalError
from .geometry import vec3
from .physics import BallState, PhysicsParams

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

PHYSICS_KEYS = {f.name for f in dataclass_fields(PhysicsParams)}
SIM_KEYS = PHYSICS_KEYS | {"max_t"}
TRAIN_KEYS = {"variant", "embedding", "size", "spin_target_frame", "epochs",
              "batch", "lr", "aug_motion_blur", "aug_sudden_end",
              "aug_gaussian", "resample_cameras"}


class UsageError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("SPINSIGHT_THREADS", "1")
    try:
        requested = int(raw)
    except ValueError as exc:
        raise UsageError(f"SPINSIGHT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(requested, os.cpu_count() or 1))


def read_config(args, allowed: set[str]) -> dict[str, str]:
    """Merge --config file keys with --set overrides; unknown keys rejected."""
    config: dict[str, str] = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                for i, raw in enumerate(fh, start=1):
                    line = raw.strip()
                    if not line or line.startswith("#"):
                        continue
                    if "=" not in line:
                        raise UsageError(f"{args.config}:{i}: expected key=value")
                    key, value = line.split("=", 1)
                    config[key.strip()] = value.strip()
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config[key.strip()] = value.strip()
    unknown = set(config) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)} "
                         f"(allowed: {sorted(allowed)})")
    return config


def physics_from_config(config: dict[str, str]) -> PhysicsParams:
    overrides = {k: float(v) for k, v in config.items() if k in PHYSICS_KEYS}
    return replace(PhysicsParams(), **overrides)


def write_effective_config(out_dir, config: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k}={config[k]}" for k in sorted(config)]
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _write(path, content: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    config = read_config(args, SIM_KEYS)
    params = physics_from_config(config)
    max_t = float(config.get("max_t", physics.MAX_SIM_TIME))
    os.makedirs(args.out, exist_ok=True)
    cam = camera_mod.default_camera()

    if args.fig1:
        runs = physics.single_spin_component_runs(params, max_t=max_t)
        lines = []
        tracks_2d, tracks_3d = {}, {}
        for name, traj in runs.items():
            uv, _ = camera_mod.project_points(cam, traj.r_frames)
            tracks_2d[name] = uv
            tracks_3d[name] = traj.r_frames
            lines.append(json.dumps({
                "name": name, "t": traj.t_frames.tolist(),
                "r": traj.r_frames.tolist(), "uv": uv.tolist(),
                "termination": traj.termination},
                separators=(",", ":")))
        _write(os.path.join(args.out, "fig1.jsonl"), "\n".join(lines) + "\n")
        if args.svg:
            _write(os.path.join(args.out, "fig1_image_plane.svg"),
                   svgplot.image_plane_svg(tracks_2d, cam.image_size))
            _write(os.path.join(args.out, "fig1_views.svg"),
                   svgplot.trajectory_views_svg(tracks_3d))
        effective = dict(config, fig1="1", seed=str(args.seed))
        write_effective_config(args.out, effective)
        print(f"wrote {args.out}/fig1.jsonl ({len(lines)} runs)")
        return EXIT_OK

    if args.init:
        values = [float(x) for x in args.init.split(",")]
        if len(values) != 9:
            raise UsageError("--init expects 9 comma-separated numbers: "
                             "rx,ry,rz,vx,vy,vz,wx,wy,wz")
        init = BallState(vec3(*values[0:3]), vec3(*values[3:6]), vec3(*values[6:9]))
    else:
        init = datagen.sample_initial(np.random.default_rng(args.seed))

    traj = physics.simulate(init, params, max_t=max_t)
    lines = [json.dumps({"t": float(t), "r": r.tolist(), "v": v.tolist(),
                         "w": w.tolist()}, separators=(",", ":"))
             for t, r, v, w in zip(traj.t_frames, traj.r_frames,
                                   traj.v_fine[traj.frame_indices],
                                   traj.w_fine[traj.frame_indices])]
    _write(os.path.join(args.out, "trajectory.jsonl"), "\n".join(lines) + "\n")
    if args.svg:
        _write(os.path.join(args.out, "trajectory_views.svg"),
               svgplot.trajectory_views_svg({"trajectory": traj.r_frames}))
    effective = dict(config, seed=str(args.seed), init=args.init or "")
    write_effective_config(args.out, effective)
    print(f"simulated {traj.n_frames} frames, termination: {traj.termination}, "
          f"bounces: {traj.n_bounces}")
    return EXIT_OK


# ------------------------------------------------------------------ gen-data

def cmd_gen_data(args) -> int:
    config = read_config(args, PHYSICS_KEYS)
    params = physics_from_config(config)
    manifest = datagen.generate_dataset(args.out, n_valid=args.n, seed=args.seed,
                                        params=params)
    effective = dict(config, n=str(args.n), seed=str(args.seed))
    write_effective_config(args.out, effective)
    print(f"dataset at {args.out}: {manifest.counts} "
          f"(physics {manifest.physics_params_hash[:12]})")
    return EXIT_OK


# ----------------------------------------------------------------- calibrate

def cmd_calibrate(args) -> int:
    annotation = camera_mod.load_keypoint_annotation(args.keypoints)
    keypoints = camera_mod.table_keypoints_3d()
    rng = np.random.default_rng(args.seed)
    model, inliers = camera_mod.calibrate_ransac(
        keypoints, annotation["keypoints_2d"], rng,
        image_size=annotation["image_size"])
    errors = camera_mod.reprojection_errors(model, keypoints,
                                            annotation["keypoints_2d"])
    os.makedirs(args.out, exist_ok=True)
    report = {
        "P": model.P.tolist(),
        "image_size": list(model.image_size),
        "inliers": inliers.tolist(),
        "n_inliers": int(inliers.sum()),
        "reprojection_px": errors.tolist(),
        "mean_inlier_reprojection_px": float(errors[inliers].mean()),
    }
    _write(os.path.join(args.out, "camera.json"),
           json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_effective_config(args.out, {"keypoints": args.keypoints,
                                      "seed": str(args.seed)})
    print(f"calibrated: {report['n_inliers']}/13 inliers, mean inlier "
          f"reprojection {report['mean_inlier_reprojection_px']:.4g} px")
    return EXIT_OK


# --------------------------------------------------------------------- train

def cmd_train(args) -> int:
    config = read_config(args, TRAIN_KEYS)
    cfg = spt.SptConfig(
        variant=config.get("variant", "connect_stage"),
        embedding=config.get("embedding", "concatenation"),
        size=config.get("size", "large"),
        spin_target_frame=config.get("spin_target_frame", "world"))
    epochs = int(config.get("epochs", 800))
    batch = int(config.get("batch", 64))
    lr = float(config.get("lr", 1e-4))
    augment = spt.AugmentOptions(
        motion_blur=config.get("aug_motion_blur", "1") == "1",
        sudden_end=config.get("aug_sudden_end", "1") == "1",
        gaussian=config.get("aug_gaussian", "1") == "1")
    resample = config.get("resample_cameras", "1") == "1"

    train_records = datagen.load_split(args.data, "train")
    val_records = datagen.load_split(args.data, "val")
    os.makedirs(args.out, exist_ok=True)
    checkpoint = os.path.join(args.out, "checkpoint.ckpt")

    log_path = os.path.join(args.out, "training_log.csv")
    columns = ("epoch", "train_loss", "val_spin_error_hz",
               "best_val_spin_error_hz", "step")
    log_rows: list[dict] = []

    def progress(row):
        log_rows.append(row)
        print(f"epoch {row['epoch']:4d}  loss {row['train_loss']:.6f}  "
              f"val spin err {row['val_spin_error_hz']:.2f} Hz  "
              f"(best {row['best_val_spin_error_hz']:.2f})")

    result = spt.train(cfg, train_records, val_records, epochs=epochs,
                       batch_size=batch, lr=lr, seed=args.seed,
                       augment=augment, resample_cameras=resample,
                       checkpoint_path=checkpoint, resume=args.resume,
                       progress=progress)

    rows = [",".join(columns)]
    rows += [",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                      for c in columns) for r in log_rows]
    _write(log_path, "\n".join(rows) + "\n")
    effective = dict(config, seed=str(args.seed), data=args.data,
                     epochs=str(epochs), batch=str(batch), lr=repr(lr))
    write_effective_config(args.out, effective)
    print(f"best validation spin error {result.best_val_spin_error:.2f} Hz "
          f"at epoch {result.best_epoch}; checkpoint: {checkpoint}")
    return EXIT_OK


# ---------------------------------------------------------------------- eval

def _calibrated_cameras(records_table_2d, image_size, seed):
    keypoints = camera_mod.table_keypoints_3d()

    def calibrate_one(item):
        index, table_2d = item
        rng = np.random.default_rng(seed + index)
        model, _ = camera_mod.calibrate_ransac(keypoints, table_2d, rng,
                                               image_size=image_size)
        return model

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(calibrate_one, enumerate(records_table_2d)))


def _spin_classification(report, classes, scores):
    report.spin_sign_accuracy = metrics.spin_sign_accuracy(classes, scores)
    report.macro_f1 = metrics.macro_f1(classes, scores)
    report.confusion = metrics.confusion(classes, scores).tolist()
    try:
        auc, curve = metrics.roc_auc(classes, scores)
        report.roc_auc = auc
        report.roc_curve = [{"fpr": f, "tpr": t, "threshold_hz": thr}
                            for f, t, thr in curve]
    except metrics.SingleClass:
        report.roc_auc = None
        report.roc_curve = None


def _emit_report(out_dir, report, overlays):
    _write(os.path.join(out_dir, "report.json"), report.to_json())
    _write(os.path.join(out_dir, "report.csv"), report.to_csv())
    if report.confusion is not None:
        _write(os.path.join(out_dir, "confusion.svg"),
               svgplot.confusion_svg(np.array(report.confusion)))
    if report.roc_curve:
        curve = [(p["fpr"], p["tpr"], p["threshold_hz"]) for p in report.roc_curve]
        _write(os.path.join(out_dir, "roc.svg"),
               svgplot.roc_svg(curve, report.roc_auc))
    for i, (annotated, reproj, image_size) in enumerate(overlays):
        _write(os.path.join(out_dir, f"reprojection_{i}.svg"),
               svgplot.reprojection_overlay_svg(annotated, reproj, image_size))


def cmd_eval(args) -> int:
    if bool(args.data) == bool(args.real):
        raise UsageError("exactly one of --data/--split or --real is required")
    try:
        cfg, weights, _, _ = spt.load_model(args.checkpoint)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from exc
    os.makedirs(args.out, exist_ok=True)

    if args.data:
        records = datagen.load_split(args.data, args.split)
        if args.limit:
            records = records[:args.limit]
        if not records:
            raise DataError(f"split {args.split} in {args.data} is empty")
        trajs, ball_spins = spt.predict_ball_spins(cfg, weights, records)
        gt_ball = np.stack([r.gt_spin_ball for r in records])
        report = metrics.MetricReport(n_trajectories=len(records))
        report.spin_error_hz = metrics.spin_error(ball_spins, gt_ball)
        report.zero_spin_baseline_hz = metrics.spin_error(
            np.zeros_like(gt_ball), gt_ball)
        report.traj_error_world_cm = 100.0 * metrics.traj_error_world(
            trajs, [r.gt_traj_3d for r in records])
        classes = np.sign(gt_ball[:, metrics.TOPSPIN_AXIS]).astype(np.int64)
        scores = ball_spins[:, metrics.TOPSPIN_AXIS]
        _spin_classification(report, classes, scores)
        image_size = records[0].image_size
        cams = _calibrated_cameras([r.table_2d for r in records], image_size,
                                   args.seed)
        report.reproj_error_rel_pct = 100.0 * metrics.reproj_error_rel(
            trajs, [r.ball_2d for r in records], cams, image_size)
        overlays = []
        for i in range(min(2, len(records))):
            uv, _ = camera_mod.project_points(cams[i], trajs[i])
            overlays.append((records[i].ball_2d, uv, image_size))
        source = {"data": args.data, "split": args.split}
    else:
        records, annotations = load_real_records(args.real, cfg.max_frames)
        trajs, ball_spins = spt.predict_ball_spins(cfg, weights, records)
        report = metrics.MetricReport(n_trajectories=len(records))
        classes = np.array([a["spin_class"] for a in annotations], dtype=np.int64)
        scores = ball_spins[:, metrics.TOPSPIN_AXIS]
        _spin_classification(report, classes, scores)
        image_size = records[0].image_size
        cams = _calibrated_cameras([r.table_2d for r in records], image_size,
                                   args.seed)
        report.reproj_error_rel_pct = 100.0 * metrics.reproj_error_rel(
            trajs, [r.ball_2d for r in records], cams, image_size)
        report.reference_full_scale = dict(metrics.FULL_SCALE_REFERENCE)
        overlays = []
        for i in range(min(2, len(records))):
            uv, _ = camera_mod.project_points(cams[i], trajs[i])
            overlays.append((records[i].ball_2d, uv, image_size))
        source = {"real": args.real}

    _emit_report(args.out, report, overlays)
    write_effective_config(args.out, dict(source, checkpoint=args.checkpoint,
                                          seed=str(args.seed)))
    summary = {k: v for k, v in vars(report).items()
               if isinstance(v, (int, float)) and v is not None}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def load_real_records(path, max_frames: int):
    """Read real-data annotations (JSONL: image_size, keypoints_2d 13x2,
    ball_2d Tx2, spin_class) into inference records; tracks longer than the
    model's frame limit are truncated with a warning."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc
    records, annotations = [], []
    for i, line in enumerate(lines, start=1):
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i}: invalid JSON: {exc.msg}") from exc
        for key in ("image_size", "keypoints_2d", "ball_2d", "spin_class"):
            if key not in raw:
                raise DataError(f"{path}:{i}: missing field {key}")
        if raw["spin_class"] not in (-1, 1):
            raise DataError(f"{path}:{i}: spin_class must be +-1")
        image_size = (int(raw["image_size"][0]), int(raw["image_size"][1]))
        keypoints = np.asarray(raw["keypoints_2d"], dtype=np.float64)
        ball = np.asarray(raw["ball_2d"], dtype=np.float64)
        if keypoints.shape != (13, 2):
            raise DataError(f"{path}:{i}: keypoints_2d must be 13x2")
        if ball.ndim != 2 or ball.shape[1] != 2 or ball.shape[0] < 1:
            raise DataError(f"{path}:{i}: ball_2d must be Tx2")
        if not (np.all(np.isfinite(keypoints)) and np.all(np.isfinite(ball))):
            raise DataError(f"{path}:{i}: non-finite coordinates")
        if ball.shape[0] > max_frames:
            print(f"warning: {path}:{i}: truncating {ball.shape[0]} frames "
                  f"to {max_frames}", file=sys.stderr)
            ball = ball[:max_frames]
        T = ball.shape[0]
        records.append(datagen.SampleRecord(
            id=f"real-{i}", split="real", image_size=image_size,
            camera=datagen.RESAMPLE, ball_2d=ball, table_2d=keypoints,
            gt_traj_3d=np.zeros((T, 3)), gt_spin_world=np.zeros(3),
            gt_spin_ball=np.zeros(3), fine_traj_3d=np.zeros((0, 3)),
            bounce_frame=0, spin_class=int(raw["spin_class"])))
        annotations.append({"spin_class": int(raw["spin_class"])})
    if not records:
        raise DataError(f"{path}: no annotations")
    return records, annotations


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinsight",
        description="Ball-flight simulation, synthetic datasets, and "
                    "spin/trajectory recovery from 2D tracks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("simulate", help="simulate a trajectory or the "
                                        "single-spin-component study")
    common(p)
    p.add_argument("--fig1", action="store_true",
                   help="run the single-spin-component study preset")
    p.add_argument("--init", help="rx,ry,rz,vx,vy,vz,wx,wy,wz initial state")
    p.add_argument("--svg", action="store_true", help="emit SVG plots")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=50000,
                   help="number of valid trajectories")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("calibrate", help="calibrate a camera from a keypoint "
                                         "annotation file")
    common(p)
    p.add_argument("keypoints", help="annotation JSON (image_size, "
                                     "keypoints_2d)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (synthetic evaluation)")
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))
    p.add_argument("--real", help="real-data annotation JSONL")
    p.add_argument("--limit", type=int, default=0,
                   help="evaluate only the first N records (0 = all)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
