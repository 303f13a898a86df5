"""Synthetic dataset generation: initial-condition sampling, validity
filtering against the frozen evaluation camera, 70/10/20 splits, the three
training augmentations, and the JSONL serialization format.

A stored record keeps raw pixel observations (normalization to model space
happens at batch assembly). Training records carry a "resample" camera
marker: the loader draws a fresh camera per epoch and reprojects the stored
3D ground truth, while validation/test records embed the frozen default
camera. The 2D tracks stored in train records correspond to the default
camera so files stay self-consistent.

Record line schema (JSON, one record per line, version checked, unknown
fields rejected):

    version, id, split, fps, image_size, camera ("resample" or {P,
    image_size}), ball_2d (Tx2), table_2d (13x2), gt_traj_3d (Tx3),
    gt_spin_world (3), gt_spin_ball (3), fine_traj_3d (Fx3, 500 Hz),
    bounce_frame (int), spin_class (null or +-1)
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import camera as camera_mod
from . import physics
from .camera import CameraModel, default_camera, project_points, table_keypoints_3d
from .errors import DataError, SpinsightError
from .geometry import ball_frame, world_to_ball
from .physics import BallState, PhysicsParams, Trajectory

FORMAT_VERSION = 1
RESAMPLE = "resample"

# motion-blur window: +-0.4 of a frame period, expressed in 500 Hz steps
BLUR_WINDOW_S = 0.4 / physics.FRAME_RATE_HZ
SUDDEN_END_PROB = 0.5
GAUSSIAN_SIGMA_PX = 2.0

MIN_FRAMES = 8
MAX_FRAMES = 40

_SAMPLER_BOX = {
    "x": (-1.6, -1.2), "y": (-0.6, 0.6), "z": (0.1, 0.5),
    "vx": (3.0, 8.0), "vy": (-1.5, 1.5), "vz": (-1.0, 3.0),
    "spin": (-100.0, 100.0),
}


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None,
                 fieldpath: str | None = None):
        loc = "" if line is None else f" (line {line}"
        loc += "" if fieldpath is None else f", field {fieldpath}"
        loc += ")" if loc else ""
        super().__init__(message + loc)
        self.line = line
        self.fieldpath = fieldpath


class MissingFineTrack(DataError):
    pass


class IoFailure(DataError):
    pass


@dataclass
class SampleRecord:
    """One training/eval example: a 2D ball track with table keypoints and
    the 3D ground truth behind them."""

    id: str
    split: str
    image_size: tuple[int, int]
    camera: CameraModel | str                 # CameraModel or "resample"
    ball_2d: np.ndarray                       # (T, 2) px
    table_2d: np.ndarray                      # (13, 2) px
    gt_traj_3d: np.ndarray                    # (T, 3) m
    gt_spin_world: np.ndarray                 # (3,) Hz
    gt_spin_ball: np.ndarray                  # (3,) Hz
    fine_traj_3d: np.ndarray                  # (F, 3) m at 500 Hz
    bounce_frame: int
    spin_class: int | None = None             # +-1, real data only
    fps: int = 50

    @property
    def n_frames(self) -> int:
        return self.ball_2d.shape[0]

    def copy(self) -> "SampleRecord":
        return replace(self, ball_2d=self.ball_2d.copy(),
                       table_2d=self.table_2d.copy(),
                       gt_traj_3d=self.gt_traj_3d.copy(),
                       gt_spin_world=self.gt_spin_world.copy(),
                       gt_spin_ball=self.gt_spin_ball.copy(),
                       fine_traj_3d=self.fine_traj_3d.copy())


@dataclass
class DatasetManifest:
    format_version: int
    seed: int
    n_valid: int
    counts: dict[str, int]
    physics_params_hash: str
    image_size: tuple[int, int]


def physics_params_hash(params: PhysicsParams) -> str:
    payload = json.dumps(asdict(params), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def sample_initial(rng: np.random.Generator) -> BallState:
    """Draw a serve-like initial state from the documented uniform boxes."""
    b = _SAMPLER_BOX
    r = np.array([rng.uniform(*b["x"]), rng.uniform(*b["y"]), rng.uniform(*b["z"])])
    v = np.array([rng.uniform(*b["vx"]), rng.uniform(*b["vy"]), rng.uniform(*b["vz"])])
    w = rng.uniform(*b["spin"], size=3)
    return BallState(r, v, w)


def _sample_initial_batch(rng: np.random.Generator, count: int):
    b = _SAMPLER_BOX
    R = np.column_stack([rng.uniform(*b["x"], count), rng.uniform(*b["y"], count),
                         rng.uniform(*b["z"], count)])
    V = np.column_stack([rng.uniform(*b["vx"], count), rng.uniform(*b["vy"], count),
                         rng.uniform(*b["vz"], count)])
    W = rng.uniform(*b["spin"], (count, 3))
    return R, V, W


def record_from_trajectory(traj: Trajectory, sample_id: str, split: str,
                           cam: CameraModel) -> SampleRecord:
    """Build a stored record from a valid simulated trajectory."""
    frames = traj.r_frames
    uv, _ = project_points(cam, frames)
    table_uv, _ = project_points(cam, table_keypoints_3d())
    spin_world = traj.w_fine[0].copy()
    frame = ball_frame(frames[0], frames[1])
    return SampleRecord(
        id=sample_id,
        split=split,
        image_size=cam.image_size,
        camera=RESAMPLE if split == "train" else cam,
        ball_2d=uv,
        table_2d=table_uv,
        gt_traj_3d=frames.copy(),
        gt_spin_world=spin_world,
        gt_spin_ball=world_to_ball(spin_world, frame),
        fine_traj_3d=traj.r_fine.copy(),
        bounce_frame=int(traj.bounce_frame_index),
    )


def generate_valid_trajectories(n_valid: int, seed: int,
                                params: PhysicsParams | None = None,
                                image_size=camera_mod.DEFAULT_IMAGE_SIZE,
                                batch: int = 2048) -> list[Trajectory]:
    """Rejection-sample initial conditions until n_valid trajectories pass
    the validity rule against the frozen default camera."""
    params = params if params is not None else PhysicsParams()
    cam = default_camera(image_size)
    rng = np.random.default_rng(seed)
    kept: list[Trajectory] = []
    while len(kept) < n_valid:
        R, V, W = _sample_initial_batch(rng, batch)
        for traj in physics.simulate_batch(R, V, W, params):
            if physics.is_valid(traj, cam, image_size):
                kept.append(traj)
                if len(kept) == n_valid:
                    break
    return kept


def split_counts(n: int) -> dict[str, int]:
    """70/10/20 split; floor division with the remainder going to train."""
    val = int(np.floor(0.10 * n))
    test = int(np.floor(0.20 * n))
    return {"train": n - val - test, "val": val, "test": test}


def generate_dataset(out_dir, n_valid: int, seed: int,
                     params: PhysicsParams | None = None,
                     image_size=camera_mod.DEFAULT_IMAGE_SIZE) -> DatasetManifest:
    """Generate, split, and serialize a dataset; deterministic in seed."""
    params = params if params is not None else PhysicsParams()
    cam = default_camera(image_size)
    trajs = generate_valid_trajectories(n_valid, seed, params, image_size)
    counts = split_counts(n_valid)
    order = (["train"] * counts["train"] + ["val"] * counts["val"]
             + ["test"] * counts["test"])

    records: dict[str, list[SampleRecord]] = {"train": [], "val": [], "test": []}
    for i, (traj, split) in enumerate(zip(trajs, order)):
        records[split].append(record_from_trajectory(traj, f"s{seed}-{i:06d}",
                                                     split, cam))
    try:
        os.makedirs(out_dir, exist_ok=True)
        for split, recs in records.items():
            write_records(os.path.join(out_dir, f"{split}.jsonl"), recs)
        manifest = DatasetManifest(
            format_version=FORMAT_VERSION, seed=seed, n_valid=n_valid,
            counts=counts, physics_params_hash=physics_params_hash(params),
            image_size=tuple(image_size))
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(asdict(manifest), fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out_dir}: {exc}") from exc
    return manifest


def record_camera(rec: SampleRecord) -> CameraModel:
    """The camera the stored 2D observations correspond to (train records
    marked "resample" store projections through the frozen default)."""
    if isinstance(rec.camera, CameraModel):
        return rec.camera
    return default_camera(rec.image_size)


def record_is_valid(rec: SampleRecord) -> bool:
    """Validity rule re-checked on a stored record's fields.

    The contact point is recovered as the lowest fine sample inside the
    bounce frame's window (the refined contact itself falls between fine
    samples), so the table-half test carries a half-step tolerance.
    """
    T = rec.n_frames
    if not MIN_FRAMES <= T <= MAX_FRAMES:
        return False
    if not rec.gt_traj_3d[0, 0] < 0.0 or not rec.gt_traj_3d[-1, 0] > 0.0:
        return False
    if not 0 < rec.bounce_frame < T:
        return False
    F = rec.fine_traj_3d.shape[0]
    lo = (rec.bounce_frame - 1) * physics.FINE_PER_FRAME
    hi = rec.bounce_frame * physics.FINE_PER_FRAME
    if rec.bounce_frame == T - 1:
        hi = F - 1
    window = rec.fine_traj_3d[lo:min(hi, F - 1) + 1]
    if window.shape[0] == 0:
        return False
    contact = window[np.argmin(window[:, 2])]
    tol = 0.02
    if not (0.0 < contact[0] <= physics.TABLE_LENGTH / 2.0 + tol
            and abs(contact[1]) <= physics.TABLE_WIDTH / 2.0 + tol):
        return False
    cam = record_camera(rec)
    uv, depth = project_points(cam, rec.gt_traj_3d)
    W, H = cam.image_size
    inside = ((depth > 0.0) & (uv[:, 0] >= 0.0) & (uv[:, 0] < W)
              & (uv[:, 1] >= 0.0) & (uv[:, 1] < H))
    return bool(inside.all())


def load_manifest(dataset_dir) -> DatasetManifest:
    path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    if raw.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported dataset format_version {raw.get('format_version')}")
    raw["image_size"] = tuple(raw["image_size"])
    return DatasetManifest(**raw)


# -------------------------------------------------------------- augmentations

def resolve_camera(rec: SampleRecord, cam: CameraModel) -> SampleRecord:
    """Replace the record's camera and reproject both 2D observations from
    the stored 3D ground truth (used for train-time camera resampling)."""
    out = rec.copy()
    out.camera = cam
    out.image_size = cam.image_size
    uv, _ = project_points(cam, rec.gt_traj_3d)
    table_uv, _ = project_points(cam, table_keypoints_3d())
    out.ball_2d = uv
    out.table_2d = table_uv
    return out


def augment_motion_blur(rec: SampleRecord, rng: np.random.Generator,
                        window_s: float = BLUR_WINDOW_S) -> SampleRecord:
    """Replace each frame with a uniformly drawn fine-rate sample from a
    +-window_s neighborhood, shifting 2D observation and 3D ground truth
    together."""
    if rec.fine_traj_3d.shape[0] == 0:
        raise MissingFineTrack(f"record {rec.id} has no fine-rate track")
    if not isinstance(rec.camera, CameraModel):
        raise SpinsightError("camera must be resolved before motion blur")
    half = int(round(window_s * physics.FINE_RATE_HZ))
    out = rec.copy()
    if half == 0:
        return out
    F = rec.fine_traj_3d.shape[0]
    nominal = np.arange(rec.n_frames) * physics.FINE_PER_FRAME
    lo = np.maximum(0, nominal - half)
    hi = np.minimum(F - 1, nominal + half)
    picks = rng.integers(lo, hi + 1)
    out.gt_traj_3d = rec.fine_traj_3d[picks].copy()
    uv, _ = project_points(rec.camera, out.gt_traj_3d)
    out.ball_2d = uv
    return out


def augment_sudden_end(rec: SampleRecord, rng: np.random.Generator,
                       prob: float = SUDDEN_END_PROB) -> SampleRecord:
    """With probability prob, truncate trailing frames; the bounce frame and
    a minimum of 8 frames are always kept."""
    if rng.random() >= prob:
        return rec.copy()
    T = rec.n_frames
    keep_min = max(rec.bounce_frame + 1, MIN_FRAMES)
    if keep_min >= T:
        return rec.copy()
    new_T = int(rng.integers(keep_min, T + 1))
    out = rec.copy()
    out.ball_2d = out.ball_2d[:new_T]
    out.gt_traj_3d = out.gt_traj_3d[:new_T]
    return out


def augment_gaussian(rec: SampleRecord, rng: np.random.Generator,
                     sigma_px: float = GAUSSIAN_SIGMA_PX) -> SampleRecord:
    """Add iid pixel noise to the ball track and table keypoints; ground
    truth stays untouched."""
    out = rec.copy()
    if sigma_px == 0.0:
        return out
    out.ball_2d = out.ball_2d + rng.normal(0.0, sigma_px, out.ball_2d.shape)
    out.table_2d = out.table_2d + rng.normal(0.0, sigma_px, out.table_2d.shape)
    return out


# -------------------------------------------------------------- serialization

_FIELD_ORDER = ("version", "id", "split", "fps", "image_size", "camera",
                "ball_2d", "table_2d", "gt_traj_3d", "gt_spin_world",
                "gt_spin_ball", "fine_traj_3d", "bounce_frame", "spin_class")


def record_to_json(rec: SampleRecord) -> str:
    cam = rec.camera
    cam_field = RESAMPLE if isinstance(cam, str) else {
        "P": cam.P.tolist(), "image_size": list(cam.image_size)}
    payload = {
        "version": FORMAT_VERSION,
        "id": rec.id,
        "split": rec.split,
        "fps": rec.fps,
        "image_size": list(rec.image_size),
        "camera": cam_field,
        "ball_2d": rec.ball_2d.tolist(),
        "table_2d": rec.table_2d.tolist(),
        "gt_traj_3d": rec.gt_traj_3d.tolist(),
        "gt_spin_world": rec.gt_spin_world.tolist(),
        "gt_spin_ball": rec.gt_spin_ball.tolist(),
        "fine_traj_3d": rec.fine_traj_3d.tolist(),
        "bounce_frame": rec.bounce_frame,
        "spin_class": rec.spin_class,
    }
    return json.dumps(payload, separators=(",", ":"))


def _array(raw, shape_tail: tuple[int, ...], fieldpath: str,
           line: int) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"not numeric: {exc}", line, fieldpath) from exc
    if arr.shape[1:] != shape_tail or arr.ndim != len(shape_tail) + 1:
        raise ParseError(f"bad shape {arr.shape}", line, fieldpath)
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite", line, fieldpath)
    return arr


def record_from_json(text: str, line: int = 0) -> SampleRecord:
    def reject_constant(name):
        raise ParseError(f"non-finite constant {name}", line)

    try:
        raw = json.loads(text, parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line) from exc
    if not isinstance(raw, dict):
        raise ParseError("record is not an object", line)
    unknown = set(raw) - set(_FIELD_ORDER)
    if unknown:
        raise ParseError(f"unknown fields {sorted(unknown)}", line)
    missing = set(_FIELD_ORDER) - set(raw)
    if missing:
        raise ParseError(f"missing fields {sorted(missing)}", line)
    if raw["version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported record version {raw['version']}", line,
                         "version")

    image_size = (int(raw["image_size"][0]), int(raw["image_size"][1]))
    cam_raw = raw["camera"]
    if cam_raw == RESAMPLE:
        cam: CameraModel | str = RESAMPLE
    else:
        try:
            cam = CameraModel(P=np.asarray(cam_raw["P"], dtype=np.float64),
                              image_size=tuple(cam_raw["image_size"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad camera: {exc}", line, "camera") from exc

    ball = _array(raw["ball_2d"], (2,), "ball_2d", line)
    table = _array(raw["table_2d"], (2,), "table_2d", line)
    traj = _array(raw["gt_traj_3d"], (3,), "gt_traj_3d", line)
    fine = _array(raw["fine_traj_3d"], (3,), "fine_traj_3d", line)
    spin_w = _array([raw["gt_spin_world"]], (3,), "gt_spin_world", line)[0]
    spin_b = _array([raw["gt_spin_ball"]], (3,), "gt_spin_ball", line)[0]
    if table.shape != (13, 2):
        raise ParseError(f"bad shape {table.shape}", line, "table_2d")
    if ball.shape[0] != traj.shape[0]:
        raise ParseError("ball_2d and gt_traj_3d lengths differ", line, "ball_2d")
    if not MIN_FRAMES <= ball.shape[0] <= MAX_FRAMES:
        raise ParseError(f"frame count {ball.shape[0]} outside "
                         f"[{MIN_FRAMES}, {MAX_FRAMES}]", line, "ball_2d")
    spin_class = raw["spin_class"]
    if spin_class is not None and spin_class not in (-1, 1):
        raise ParseError("spin_class must be null or +-1", line, "spin_class")

    return SampleRecord(
        id=str(raw["id"]), split=str(raw["split"]), image_size=image_size,
        camera=cam, ball_2d=ball, table_2d=table, gt_traj_3d=traj,
        gt_spin_world=spin_w, gt_spin_ball=spin_b, fine_traj_3d=fine,
        bounce_frame=int(raw["bounce_frame"]),
        spin_class=None if spin_class is None else int(spin_class),
        fps=int(raw["fps"]))


def write_records(path, records: list[SampleRecord]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(record_to_json(rec))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_records(path) -> list[SampleRecord]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return [record_from_json(text, line=i + 1)
            for i, text in enumerate(lines) if text.strip()]


def load_split(dataset_dir, split: str) -> list[SampleRecord]:
    if split not in ("train", "val", "test"):
        raise DataError(f"unknown split {split!r}")
    return read_records(os.path.join(dataset_dir, f"{split}.jsonl"))
