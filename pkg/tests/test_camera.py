import numpy as np
import pytest

from spinsight.camera import (
    DEFAULT_IMAGE_SIZE,
    OFF_PLANE_KEYPOINTS,
    BehindCamera,
    CalibrationFailed,
    CameraModel,
    DegenerateConfiguration,
    calibrate_ransac,
    camera_from_look_at,
    default_camera,
    dlt,
    project,
    project_points,
    refine_bfgs,
    reprojection_errors,
    sample_camera,
    table_keypoints_3d,
)

KP = table_keypoints_3d()


def scene_camera(rng):
    return sample_camera(rng, DEFAULT_IMAGE_SIZE)


# ------------------------------------------------------------------ keypoints

def test_keypoint_layout():
    assert KP.shape == (13, 3)
    np.testing.assert_allclose(KP[0], [-1.37, -0.7625, 0.0])
    np.testing.assert_allclose(KP[8], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(KP[10], [0.0, 0.915, 0.1525])
    # all points distinct
    assert len({tuple(p) for p in KP.round(12)}) == 13
    # exactly the two net-post tops sit off the table plane
    off = np.where(np.abs(KP[:, 2]) > 1e-12)[0]
    assert tuple(off) == OFF_PLANE_KEYPOINTS


# ----------------------------------------------------------------- projection

def test_look_at_target_hits_principal_point():
    cam = camera_from_look_at((-8, 0, 2.6), (0, 0, 0), 2000.0, (1920, 1080))
    u, v = project(cam, np.zeros(3))
    np.testing.assert_allclose([u, v], [960.0, 540.0], atol=1e-9)


def test_projection_scale_invariant():
    rng = np.random.default_rng(1)
    cam = scene_camera(rng)
    cam_scaled = CameraModel(P=3.7 * cam.P, image_size=cam.image_size)
    pts = rng.uniform(-1, 1, (20, 3))
    a, _ = project_points(cam, pts)
    b, _ = project_points(cam_scaled, pts)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_behind_camera_raises():
    cam = default_camera()
    with pytest.raises(BehindCamera):
        project(cam, np.array([-20.0, 0.0, 0.0]))


def test_default_camera_centers_table():
    cam = default_camera()
    W, H = cam.image_size
    u, v = project(cam, np.zeros(3))
    assert abs(u - W / 2) <= 0.1 * W
    assert abs(v - H / 2) <= 0.1 * H


# -------------------------------------------------------------------- sampler

def test_sampler_keeps_keypoints_in_frame():
    rng = np.random.default_rng(42)
    W, H = DEFAULT_IMAGE_SIZE
    for _ in range(1000):
        cam = sample_camera(rng, DEFAULT_IMAGE_SIZE)
        uv, depth = project_points(cam, KP)
        assert np.all(depth > 0)
        assert np.all((uv[:, 0] >= 0) & (uv[:, 0] < W))
        assert np.all((uv[:, 1] >= 0) & (uv[:, 1] < H))


def test_sampler_deterministic():
    a = sample_camera(np.random.default_rng(7), DEFAULT_IMAGE_SIZE)
    b = sample_camera(np.random.default_rng(7), DEFAULT_IMAGE_SIZE)
    np.testing.assert_array_equal(a.P, b.P)


def test_sampler_produces_distinct_views():
    rng = np.random.default_rng(3)
    shapes = []
    for _ in range(200):
        cam = sample_camera(rng, DEFAULT_IMAGE_SIZE)
        uv, _ = project_points(cam, KP)
        shapes.append(uv)
    shapes = np.stack(shapes)
    n = len(shapes)
    close = 0
    total = n * (n - 1) // 2
    for i in range(n):
        d = shapes[i + 1:] - shapes[i]
        rms = np.sqrt(np.mean(np.sum(d * d, axis=2), axis=1))
        close += int((rms <= 5.0).sum())
    assert close / total < 0.01


# ------------------------------------------------------------------------ DLT

def test_dlt_recovers_camera_from_clean_keypoints():
    rng = np.random.default_rng(10)
    for _ in range(20):
        cam = scene_camera(rng)
        uv, _ = project_points(cam, KP)
        est = dlt(KP, uv, cam.image_size)
        assert reprojection_errors(est, KP, uv).max() < 1e-6
        # equal up to scale, and both are Frobenius-normalized
        np.testing.assert_allclose(est.P, cam.P, atol=1e-8)


def test_dlt_coplanar_degenerate():
    rng = np.random.default_rng(11)
    cam = scene_camera(rng)
    planar = [0, 1, 2, 3, 4, 8]  # all on the table surface
    uv, _ = project_points(cam, KP[planar])
    with pytest.raises(DegenerateConfiguration):
        dlt(KP[planar], uv, cam.image_size)


def test_dlt_duplicate_points_degenerate():
    rng = np.random.default_rng(12)
    cam = scene_camera(rng)
    idx = [0, 0, 3, 8, 9, 10]
    uv, _ = project_points(cam, KP[idx])
    with pytest.raises(DegenerateConfiguration):
        dlt(KP[idx], uv, cam.image_size)


def test_dlt_single_off_plane_point_degenerate():
    # 5 coplanar points + 1 net-post top underdetermine the projection
    rng = np.random.default_rng(13)
    cam = scene_camera(rng)
    idx = [0, 1, 2, 3, 8, 9]
    uv, _ = project_points(cam, KP[idx])
    with pytest.raises(DegenerateConfiguration):
        dlt(KP[idx], uv, cam.image_size)


def test_dlt_needs_six_points():
    with pytest.raises(ValueError):
        dlt(KP[:5], np.zeros((5, 2)))


# ----------------------------------------------------------------- refinement

def test_refine_from_truth_is_stationary():
    rng = np.random.default_rng(20)
    cam = scene_camera(rng)
    uv, _ = project_points(cam, KP)
    out = refine_bfgs(cam, KP, uv)
    np.testing.assert_array_equal(out.P, cam.P)


def test_refine_never_increases_error():
    rng = np.random.default_rng(21)
    for _ in range(100):
        cam = scene_camera(rng)
        uv, _ = project_points(cam, KP)
        noisy = uv + rng.normal(0.0, 0.5, uv.shape)
        est = dlt(KP, noisy, cam.image_size)
        before = float(np.mean(reprojection_errors(est, KP, noisy) ** 2))
        refined = refine_bfgs(est, KP, noisy)
        after = float(np.mean(reprojection_errors(refined, KP, noisy) ** 2))
        assert after <= before + 1e-12


def test_refine_recovers_from_perturbation():
    rng = np.random.default_rng(22)
    cam = scene_camera(rng)
    uv, _ = project_points(cam, KP)
    p0 = cam.P * (1.0 + 0.01 * rng.standard_normal((3, 4)))
    refined = refine_bfgs(CameraModel(P=p0, image_size=cam.image_size), KP, uv)
    assert reprojection_errors(refined, KP, uv).max() < 1e-4


# --------------------------------------------------------------------- RANSAC

def test_ransac_clean_scene():
    rng = np.random.default_rng(30)
    cam = scene_camera(rng)
    uv, _ = project_points(cam, KP)
    model, inliers = calibrate_ransac(KP, uv, np.random.default_rng(0),
                                      cam.image_size)
    assert inliers.all()
    assert reprojection_errors(model, KP, uv).max() < 1e-6


def test_ransac_excludes_corrupted_keypoints():
    rng = np.random.default_rng(31)
    for _ in range(10):
        cam = scene_camera(rng)
        uv, _ = project_points(cam, KP)
        # corrupt 3 of the in-plane keypoints; both off-plane anchors must
        # stay clean for a non-degenerate consensus set to exist at all
        planar = [i for i in range(13) if i not in OFF_PLANE_KEYPOINTS]
        bad = rng.choice(planar, size=3, replace=False)
        noisy = uv.copy()
        angles = rng.uniform(0, 2 * np.pi, 3)
        noisy[bad] += 50.0 * np.column_stack([np.cos(angles), np.sin(angles)])
        model, inliers = calibrate_ransac(KP, noisy, np.random.default_rng(99),
                                          cam.image_size)
        assert sorted(np.where(~inliers)[0]) == sorted(bad)
        clean = np.setdiff1d(np.arange(13), bad)
        assert reprojection_errors(model, KP[clean], uv[clean]).max() < 1.0


def test_ransac_fails_with_too_few_inliers():
    rng = np.random.default_rng(32)
    cam = scene_camera(rng)
    uv, _ = project_points(cam, KP)
    noisy = uv.copy()
    bad = rng.choice(13, size=10, replace=False)
    angles = rng.uniform(0, 2 * np.pi, 10)
    noisy[bad] += rng.uniform(40, 80, (10, 1)) * np.column_stack(
        [np.cos(angles), np.sin(angles)])
    with pytest.raises(CalibrationFailed):
        calibrate_ransac(KP, noisy, np.random.default_rng(1), cam.image_size)


def test_ransac_deterministic():
    rng = np.random.default_rng(33)
    cam = scene_camera(rng)
    uv, _ = project_points(cam, KP)
    uv_noisy = uv + np.random.default_rng(5).normal(0, 0.5, uv.shape)
    m1, in1 = calibrate_ransac(KP, uv_noisy, np.random.default_rng(4), cam.image_size)
    m2, in2 = calibrate_ransac(KP, uv_noisy, np.random.default_rng(4), cam.image_size)
    np.testing.assert_array_equal(m1.P, m2.P)
    np.testing.assert_array_equal(in1, in2)
