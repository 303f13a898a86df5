import json

import numpy as np
import pytest

from spinsight import cli
from spinsight.camera import (
    DEFAULT_IMAGE_SIZE,
    OFF_PLANE_KEYPOINTS,
    project_points,
    sample_camera,
    table_keypoints_3d,
)
from spinsight.datagen import load_manifest, load_split


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert run(["gen-data", "--n", "60", "--seed", "42", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("run") / "train"
    code = run(["train", "--data", str(dataset_dir), "--out", str(out),
                "--seed", "1", "--set", "size=small", "--set", "epochs=2",
                "--set", "batch=16", "--set", "lr=1e-3"])
    assert code == 0
    return out / "checkpoint.ckpt"


# ------------------------------------------------------------------ simulate

def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["simulate", "--seed", "3", "--out", str(out), "--svg"]) == 0
    assert (a / "trajectory.jsonl").read_bytes() == (b / "trajectory.jsonl").read_bytes()
    assert (a / "config.txt").exists()
    assert (a / "trajectory_views.svg").read_text().startswith("<svg")


def test_simulate_fig1_lateral_separation(tmp_path):
    out = tmp_path / "fig1"
    assert run(["simulate", "--fig1", "--out", str(out), "--svg"]) == 0
    runs = {}
    for line in (out / "fig1.jsonl").read_text().splitlines():
        raw = json.loads(line)
        runs[raw["name"]] = np.asarray(raw["uv"])
    assert set(runs) == {"none", "forward", "left", "up"}
    n = min(len(runs["none"]), len(runs["up"]))
    lateral = np.abs(runs["up"][:n, 0] - runs["none"][:n, 0]).max()
    assert lateral > 50.0  # sidespin separates horizontally in the image
    assert (out / "fig1_image_plane.svg").exists()


def test_simulate_rejects_unknown_key(tmp_path):
    code = run(["simulate", "--out", str(tmp_path / "x"),
                "--set", "not_a_param=1"])
    assert code == 2


def test_simulate_explicit_init(tmp_path):
    out = tmp_path / "init"
    assert run(["simulate", "--init=-1.4,0,0.2,6,0,1,0,0,0",
                "--out", str(out)]) == 0
    lines = (out / "trajectory.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    np.testing.assert_allclose(first["r"], [-1.4, 0, 0.2])


# ------------------------------------------------------------------ gen-data

def test_gen_data_outputs(dataset_dir):
    manifest = load_manifest(dataset_dir)
    assert manifest.counts == {"train": 42, "val": 6, "test": 12}
    assert len(load_split(dataset_dir, "train")) == 42
    assert (dataset_dir / "config.txt").exists()


def test_gen_data_byte_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["gen-data", "--n", "25", "--seed", "9", "--out", str(out)]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json",
                 "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# ----------------------------------------------------------------- calibrate

def annotation_file(tmp_path, corrupt=0, seed=5):
    rng = np.random.default_rng(seed)
    cam = sample_camera(rng, DEFAULT_IMAGE_SIZE)
    uv, _ = project_points(cam, table_keypoints_3d())
    planar = [i for i in range(13) if i not in OFF_PLANE_KEYPOINTS]
    bad = rng.choice(planar, size=corrupt, replace=False) if corrupt else []
    for i in bad:
        angle = rng.uniform(0, 2 * np.pi)
        uv[i] += 50.0 * np.array([np.cos(angle), np.sin(angle)])
    path = tmp_path / "keypoints.json"
    path.write_text(json.dumps({"image_size": list(DEFAULT_IMAGE_SIZE),
                                "keypoints_2d": uv.tolist()}))
    return path, sorted(int(i) for i in bad)


def test_calibrate_clean(tmp_path):
    path, _ = annotation_file(tmp_path)
    out = tmp_path / "cal"
    assert run(["calibrate", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "camera.json").read_text())
    assert report["n_inliers"] == 13
    assert max(report["reprojection_px"]) < 1e-6


def test_calibrate_excludes_corrupted(tmp_path):
    path, bad = annotation_file(tmp_path, corrupt=3, seed=8)
    out = tmp_path / "cal"
    assert run(["calibrate", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "camera.json").read_text())
    excluded = [i for i, ok in enumerate(report["inliers"]) if not ok]
    assert excluded == bad


def test_calibrate_fails_with_garbage(tmp_path):
    rng = np.random.default_rng(0)
    uv = rng.uniform(0, 1000, (13, 2))
    path = tmp_path / "garbage.json"
    path.write_text(json.dumps({"image_size": list(DEFAULT_IMAGE_SIZE),
                                "keypoints_2d": uv.tolist()}))
    assert run(["calibrate", str(path), "--out", str(tmp_path / "cal")]) == 4


# --------------------------------------------------------------------- train

def test_train_outputs(checkpoint):
    out = checkpoint.parent
    log = (out / "training_log.csv").read_text().splitlines()
    assert log[0].split(",")[0] == "epoch"
    best = [float(row.split(",")[3]) for row in log[1:]]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))  # running min
    assert (out / "config.txt").exists()
    assert checkpoint.exists()


def test_train_byte_reproducible(tmp_path, dataset_dir):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run(["train", "--data", str(dataset_dir), "--out", str(out),
                    "--seed", "4", "--set", "size=small", "--set", "epochs=1",
                    "--set", "batch=16"]) == 0
        outs.append(out)
    for name in ("checkpoint.ckpt", "training_log.csv", "config.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_train_rejects_unknown_key(tmp_path, dataset_dir):
    code = run(["train", "--data", str(dataset_dir),
                "--out", str(tmp_path / "x"), "--set", "bogus=1"])
    assert code == 2


# ---------------------------------------------------------------------- eval

def test_eval_synthetic(tmp_path, dataset_dir, checkpoint):
    out = tmp_path / "eval"
    assert run(["eval", "--checkpoint", str(checkpoint), "--data",
                str(dataset_dir), "--split", "test", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["n_trajectories"] == 12
    for key in ("spin_error_hz", "traj_error_world_cm", "spin_sign_accuracy",
                "macro_f1", "reproj_error_rel_pct", "zero_spin_baseline_hz"):
        assert report[key] is not None
    assert report["spin_error_hz"] >= 0
    counts = np.array(report["confusion"])
    assert counts.sum() == 12
    assert (out / "report.csv").exists()
    assert (out / "confusion.svg").exists()
    assert (out / "reprojection_0.svg").exists()


def test_eval_real_annotations(tmp_path, checkpoint):
    # synthetic stand-in for the real-annotation format
    rng = np.random.default_rng(12)
    cam = sample_camera(rng, DEFAULT_IMAGE_SIZE)
    kp_uv, _ = project_points(cam, table_keypoints_3d())
    lines = []
    for j in range(6):
        t = np.linspace(0, 1, 12)
        world = np.column_stack([-1.2 + 2.2 * t, 0.1 * np.sin(t * 3 + j),
                                 0.25 + 0.4 * t - 0.45 * t * t])
        uv, _ = project_points(cam, world)
        lines.append(json.dumps({
            "image_size": list(DEFAULT_IMAGE_SIZE),
            "keypoints_2d": kp_uv.tolist(),
            "ball_2d": uv.tolist(),
            "spin_class": 1 if j % 2 == 0 else -1}))
    path = tmp_path / "real.jsonl"
    path.write_text("\n".join(lines) + "\n")
    out = tmp_path / "eval_real"
    assert run(["eval", "--checkpoint", str(checkpoint), "--real", str(path),
                "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["spin_sign_accuracy"] is not None
    assert report["reproj_error_rel_pct"] is not None
    assert report["reference_full_scale"]["spin_sign_accuracy"] == 0.92
    assert report["spin_error_hz"] is None  # no 3D ground truth


def test_eval_missing_checkpoint(tmp_path, dataset_dir):
    code = run(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                "--data", str(dataset_dir), "--out", str(tmp_path / "x")])
    assert code == 3


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run(["not-a-command"])
    assert exc.value.code == 2


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SPINSIGHT_THREADS", "8")
    assert 1 <= cli.worker_count() <= 8
    monkeypatch.setenv("SPINSIGHT_THREADS", "1")
    assert cli.worker_count() == 1
    monkeypatch.setenv("SPINSIGHT_THREADS", "zebra")
    with pytest.raises(cli.UsageError):
        cli.worker_count()


def test_gen_data_smoke_timing(tmp_path):
    import time
    start = time.perf_counter()
    assert run(["gen-data", "--n", "100", "--seed", "2", "--out",
                str(tmp_path / "smoke")]) == 0
    assert time.perf_counter() - start < 5.0


def test_train_smoke_timing(tmp_path):
    import time
    data = tmp_path / "d"
    assert run(["gen-data", "--n", "200", "--seed", "3", "--out", str(data)]) == 0
    start = time.perf_counter()
    assert run(["train", "--data", str(data), "--out", str(tmp_path / "t"),
                "--set", "size=small", "--set", "epochs=5",
                "--set", "batch=64"]) == 0
    assert time.perf_counter() - start < 120.0


def test_eval_limit(tmp_path, dataset_dir, checkpoint):
    out = tmp_path / "eval_limited"
    assert run(["eval", "--checkpoint", str(checkpoint), "--data",
                str(dataset_dir), "--split", "test", "--limit", "5",
                "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["n_trajectories"] == 5
