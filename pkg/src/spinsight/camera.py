"""Pinhole cameras over the table scene: projection, randomized
broadcast-style sampling, and robust calibration from the 13 canonical
table keypoints (direct linear transform inside a RANSAC loop, each
candidate polished by BFGS on the analytic reprojection gradient).

A camera is a scale-normalized 3x4 projective matrix mapping world meters
(origin at the table center on the playing surface, z up) to pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .physics import NET_HEIGHT, NET_OVERHANG, TABLE_LENGTH, TABLE_WIDTH

DEFAULT_IMAGE_SIZE = (2560, 1440)

# Indices into table_keypoints_3d() of the only points off the table plane
# (the net-post tops). Every non-degenerate 6-point calibration subset must
# contain both.
OFF_PLANE_KEYPOINTS = (9, 10)


class BehindCamera(NumericalError):
    """Projection of a point with non-positive depth."""


class SamplingExhausted(NumericalError):
    """Camera sampler failed to frame all keypoints within the attempt budget."""


class DegenerateConfiguration(NumericalError):
    """DLT design matrix is rank-deficient (coplanar/collinear/duplicate points)."""


class CalibrationFailed(NumericalError):
    """RANSAC could not find a usable camera (fewer than 6 inliers)."""


@dataclass(frozen=True)
class CameraModel:
    """3x4 projection, Frobenius-normalized, oriented so the table center
    has positive depth."""

    P: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (3, 4) or not np.all(np.isfinite(P)):
            raise ValueError("P must be a finite 3x4 matrix")
        center_depth = P[2, 3]
        if abs(center_depth) < 1e-15:
            raise ValueError("table center lies on the principal plane")
        if center_depth < 0.0:
            P = -P
        norm = np.linalg.norm(P)
        if abs(norm - 1.0) > 1e-12:   # keep already-normalized bits intact
            P = P / norm
        sv = np.linalg.svd(P[:, :3], compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise ValueError("left 3x3 block of P is rank-deficient")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "image_size", (int(self.image_size[0]),
                                                int(self.image_size[1])))


def table_keypoints_3d() -> np.ndarray:
    """The 13 canonical keypoints (meters, world frame), fixed order:

    0-3   table corners (-x,-y), (-x,+y), (+x,-y), (+x,+y)
    4-5   net line on the long edges (0, -y), (0, +y)
    6-7   center line endpoints (-x, 0), (+x, 0)
    8     table center
    9-10  net-post tops (0, -+post_y, net height)
    11-12 net-post bases (0, -+post_y, 0)

    where post_y = half table width + post overhang. All z are relative to
    the playing surface (corners at z = 0, floor at z = -0.76).
    """
    hl, hw = TABLE_LENGTH / 2.0, TABLE_WIDTH / 2.0
    post_y = hw + NET_OVERHANG
    return np.array([
        [-hl, -hw, 0.0],
        [-hl, +hw, 0.0],
        [+hl, -hw, 0.0],
        [+hl, +hw, 0.0],
        [0.0, -hw, 0.0],
        [0.0, +hw, 0.0],
        [-hl, 0.0, 0.0],
        [+hl, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, -post_y, NET_HEIGHT],
        [0.0, +post_y, NET_HEIGHT],
        [0.0, -post_y, 0.0],
        [0.0, +post_y, 0.0],
    ])


def project_points(cam: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) world points; returns pixel (N, 2) and depth (N,).

    Does not raise on non-positive depth; callers decide (the validity
    filter treats behind-camera as invalid, project() raises).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    homo = cam.P[:, :3] @ pts.T + cam.P[:, 3:4]
    depth = homo[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = (homo[:2] / depth).T
    return uv, depth


def project(cam: CameraModel, r: np.ndarray) -> tuple[float, float]:
    """Project a single world point to pixel coordinates."""
    uv, depth = project_points(cam, np.asarray(r, dtype=np.float64)[None, :])
    if depth[0] <= 0.0:
        raise BehindCamera(f"point depth {depth[0]:.3e} is not positive")
    return float(uv[0, 0]), float(uv[0, 1])


def camera_from_look_at(position, target, focal_px: float,
                        image_size: tuple[int, int],
                        principal_point: tuple[float, float] | None = None,
                        roll_rad: float = 0.0) -> CameraModel:
    """Build a camera at `position` aimed at `target` with world-z up."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("camera looking straight up/down")
    right /= nr
    down = np.cross(fwd, right)
    if roll_rad != 0.0:
        c, s = math.cos(roll_rad), math.sin(roll_rad)
        right, down = c * right + s * down, -s * right + c * down
    R = np.stack([right, down, fwd])
    W, H = image_size
    cx, cy = principal_point if principal_point is not None else (W / 2.0, H / 2.0)
    K = np.array([[focal_px, 0.0, cx], [0.0, focal_px, cy], [0.0, 0.0, 1.0]])
    P = K @ np.hstack([R, -R @ position[:, None]])
    return CameraModel(P=P, image_size=image_size)


def default_camera(image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> CameraModel:
    """The frozen evaluation/validation camera: 8 m behind the left end of
    the table, 2.6 m above the surface, aimed at the table center."""
    W, _ = image_size
    return camera_from_look_at((-8.0, 0.0, 2.6), (0.0, 0.0, 0.0),
                               focal_px=1.2 * W, image_size=image_size)


def sample_camera(rng: np.random.Generator,
                  image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
                  max_attempts: int = 1000) -> CameraModel:
    """Draw a random broadcast-like camera that frames all 13 keypoints.

    Intrinsics: focal uniform in [0.8, 1.6]*W, principal point jittered by
    +-2% of W/H, zero skew. Extrinsics: horizontal distance 6-10 m from the
    table center at an azimuth within +-25 degrees of the -x axis, height
    1.5-4.5 m above the surface, aimed at the table center with +-0.3 m
    jitter, roll +-3 degrees. Rejection-samples until every keypoint
    projects inside the image.
    """
    W, H = image_size
    keypoints = table_keypoints_3d()
    for _ in range(max_attempts):
        focal = rng.uniform(0.8, 1.6) * W
        cx = W / 2.0 + rng.uniform(-0.02, 0.02) * W
        cy = H / 2.0 + rng.uniform(-0.02, 0.02) * H
        dist = rng.uniform(6.0, 10.0)
        azimuth = math.radians(rng.uniform(-25.0, 25.0))
        height = rng.uniform(1.5, 4.5)
        position = (-dist * math.cos(azimuth), dist * math.sin(azimuth), height)
        target = rng.uniform(-0.3, 0.3, size=3)
        roll = math.radians(rng.uniform(-3.0, 3.0))
        cam = camera_from_look_at(position, target, focal, image_size,
                                  principal_point=(cx, cy), roll_rad=roll)
        uv, depth = project_points(cam, keypoints)
        inside = ((depth > 0.0) & (uv[:, 0] >= 0.0) & (uv[:, 0] < W)
                  & (uv[:, 1] >= 0.0) & (uv[:, 1] < H))
        if inside.all():
            return cam
    raise SamplingExhausted(f"no framing camera found in {max_attempts} attempts")


def _hartley_2d(pixels: np.ndarray) -> np.ndarray:
    centroid = pixels.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((pixels - centroid) ** 2, axis=1)))
    if rms < 1e-12:
        raise DegenerateConfiguration("2D points are coincident")
    s = math.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _hartley_3d(world: np.ndarray) -> np.ndarray:
    centroid = world.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((world - centroid) ** 2, axis=1)))
    if rms < 1e-12:
        raise DegenerateConfiguration("3D points are coincident")
    s = math.sqrt(3.0) / rms
    T = np.eye(4)
    T[:3, :3] *= s
    T[:3, 3] = -s * centroid
    return T


def dlt(world: np.ndarray, pixels: np.ndarray,
        image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> CameraModel:
    """Estimate the projection matrix from >= 6 correspondences by SVD of
    the normalized design matrix (Hartley preconditioning on both sides).

    Raises DegenerateConfiguration when the design matrix has more than a
    one-dimensional null space (coplanar or otherwise critical sets).
    """
    world = np.asarray(world, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    n = world.shape[0]
    if n < 6:
        raise ValueError(f"need at least 6 correspondences, got {n}")
    T2, T3 = _hartley_2d(pixels), _hartley_3d(world)
    Xh = np.hstack([world, np.ones((n, 1))]) @ T3.T
    uvh = np.hstack([pixels, np.ones((n, 1))]) @ T2.T
    u, v = uvh[:, 0], uvh[:, 1]

    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -u[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -v[:, None] * Xh

    _, sv, Vt = np.linalg.svd(A)
    if sv[10] <= 1e-8 * sv[0]:
        raise DegenerateConfiguration(
            "design matrix rank-deficient (coplanar or duplicate points)")
    Pn = Vt[11].reshape(3, 4)
    P = np.linalg.inv(T2) @ Pn @ T3
    depths = (np.hstack([world, np.ones((n, 1))]) @ P[2])
    if np.median(depths) < 0.0:
        P = -P
    try:
        return CameraModel(P=P, image_size=image_size)
    except ValueError as exc:
        raise DegenerateConfiguration(f"estimate is not a valid camera: {exc}") from exc


def reprojection_errors(cam: CameraModel, world: np.ndarray,
                        pixels: np.ndarray) -> np.ndarray:
    """Per-point pixel distance between projections and observations."""
    uv, depth = project_points(cam, world)
    err = np.sqrt(np.sum((uv - pixels) ** 2, axis=1))
    return np.where(depth > 0.0, err, np.inf)


def _reproj_cost_grad(p: np.ndarray, world_h: np.ndarray,
                      pixels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared pixel reprojection error over the 12 entries of P,
    with its analytic gradient."""
    P = p.reshape(3, 4)
    n = world_h.shape[0]
    w = world_h @ P[2]
    if np.any(np.abs(w) < 1e-300) or np.any(w <= 0.0):
        return np.inf, np.zeros(12)
    u = (world_h @ P[0]) / w
    v = (world_h @ P[1]) / w
    du = u - pixels[:, 0]
    dv = v - pixels[:, 1]
    cost = float(np.mean(du * du + dv * dv))
    Xw = world_h / w[:, None]
    g1 = (2.0 / n) * (du @ Xw)
    g2 = (2.0 / n) * (dv @ Xw)
    g3 = (2.0 / n) * ((-du * u - dv * v) @ Xw)
    return cost, np.concatenate([g1, g2, g3])


def refine_bfgs(cam0: CameraModel, world: np.ndarray, pixels: np.ndarray,
                grad_tol: float = 1e-10, max_iter: int = 500) -> CameraModel:
    """Polish a camera by BFGS on the mean squared reprojection error.

    All 12 entries of P are free (the objective is scale-invariant, so the
    gauge direction simply has zero gradient); the Frobenius norm is
    re-imposed by CameraModel construction on return. The optimization runs
    in Hartley-normalized coordinates on both sides (a similarity rescaling
    of the objective, so the minimizer and error ordering are unchanged but
    the conditioning is sane). The best iterate is returned, so the result
    never has a higher error than the start.
    """
    world = np.asarray(world, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    world_h = np.hstack([world, np.ones((world.shape[0], 1))])

    T2, T3 = _hartley_2d(pixels), _hartley_3d(world)
    pix_n = (np.hstack([pixels, np.ones((pixels.shape[0], 1))]) @ T2.T)[:, :2]
    world_h = world_h @ T3.T
    T3_inv = np.linalg.inv(T3)

    p = (T2 @ cam0.P @ T3_inv).ravel()
    f, g = _reproj_cost_grad(p, world_h, pix_n)
    if np.linalg.norm(g) < grad_tol:
        return cam0
    best_f, best_p = f, p.copy()
    Hinv = np.eye(12)
    stalled = 0
    first_update = True

    for _ in range(max_iter):
        if np.linalg.norm(g) < grad_tol:
            break
        d = -Hinv @ g
        gd = g @ d
        if gd >= 0.0:   # lost curvature; restart on steepest descent
            Hinv = np.eye(12)
            d = -g
            gd = g @ d
        # backtracking with quadratic interpolation on the Armijo condition
        alpha, ok = min(1.0, 1.0 / (1.0 + np.linalg.norm(d))), False
        for _ls in range(40):
            f_trial, _ = _reproj_cost_grad(p + alpha * d, world_h, pix_n)
            if f_trial <= f + 1e-4 * alpha * gd:
                ok = True
                break
            denom = 2.0 * (f_trial - f - alpha * gd)
            if np.isfinite(denom) and denom > 0.0:
                alpha = min(max(-gd * alpha * alpha / denom, 0.1 * alpha),
                            0.5 * alpha)
            else:
                alpha *= 0.5
        if not ok:
            break
        p_new = p + alpha * d
        f_new, g_new = _reproj_cost_grad(p_new, world_h, pix_n)
        s, y = p_new - p, g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                # scale the seed matrix to the problem's curvature
                Hinv = (sy / (y @ y)) * np.eye(12)
                first_update = False
            rho = 1.0 / sy
            V = np.eye(12) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        stalled = stalled + 1 if f - f_new <= 1e-15 * max(f, 1e-30) else 0
        p, f, g = p_new, f_new, g_new
        if f < best_f:
            best_f, best_p = f, p.copy()
        if stalled >= 3:   # machine-precision valley; no progress left
            break
    return CameraModel(P=np.linalg.inv(T2) @ best_p.reshape(3, 4) @ T3,
                       image_size=cam0.image_size)


def _coplanar(world: np.ndarray, tol: float = 1e-6) -> bool:
    centered = world - world.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[-1] <= tol


def calibrate_ransac(world: np.ndarray, pixels: np.ndarray,
                     rng: np.random.Generator,
                     image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
                     n_iterations: int = 100,
                     inlier_px: float = 3.0) -> tuple[CameraModel, np.ndarray]:
    """Robust calibration from the 13 canonical correspondences.

    Each of the 100 iterations draws 6 keypoints (redrawing coplanar or
    otherwise degenerate subsets), fits DLT + BFGS, and counts inliers
    within 3 px. The most-inlier iteration wins (ties to the earliest); the
    returned camera is DLT + BFGS refit on all of its inliers, along with
    the inlier mask. Candidate scoring uses a reduced BFGS budget (clean
    draws fit exactly and return immediately; polishing contaminated draws
    further cannot win the consensus vote); the final inlier refit gets the
    full budget.
    """
    world = np.asarray(world, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    n = world.shape[0]
    best_count, best_mask = -1, None

    for _ in range(n_iterations):
        model = None
        for _attempt in range(200):
            idx = rng.choice(n, size=6, replace=False)
            if _coplanar(world[idx]):
                continue
            try:
                model = refine_bfgs(dlt(world[idx], pixels[idx], image_size),
                                    world[idx], pixels[idx], max_iter=15)
            except (DegenerateConfiguration, ValueError):
                continue
            break
        if model is None:
            continue
        inliers = reprojection_errors(model, world, pixels) <= inlier_px
        count = int(inliers.sum())
        if count > best_count:
            best_count, best_mask = count, inliers

    # A 6-point fit near-interpolates its own sample (11 dof vs 12
    # constraints), so a consensus of exactly the minimal draw carries no
    # independent support; require at least one extra agreeing point.
    if best_count < 7:
        raise CalibrationFailed(f"best consensus has {max(best_count, 0)} inliers")
    try:
        final = refine_bfgs(dlt(world[best_mask], pixels[best_mask], image_size),
                            world[best_mask], pixels[best_mask])
    except DegenerateConfiguration as exc:
        raise CalibrationFailed(f"inlier set is degenerate: {exc}") from exc
    return final, best_mask


def load_keypoint_annotation(path) -> dict:
    """Read a keypoint annotation file: JSON with image_size, keypoints_2d
    (13 x [u, v] in canonical order), and an optional ball_2d track."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read annotation {path}: {exc}") from exc
    try:
        image_size = (int(raw["image_size"][0]), int(raw["image_size"][1]))
        keypoints = np.asarray(raw["keypoints_2d"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed annotation {path}: {exc}") from exc
    if keypoints.shape != (13, 2) or not np.all(np.isfinite(keypoints)):
        raise DataError(f"annotation {path}: keypoints_2d must be finite 13x2")
    out = {"image_size": image_size, "keypoints_2d": keypoints}
    if "ball_2d" in raw and raw["ball_2d"] is not None:
        ball = np.asarray(raw["ball_2d"], dtype=np.float64)
        if ball.ndim != 2 or ball.shape[1] != 2 or not np.all(np.isfinite(ball)):
            raise DataError(f"annotation {path}: ball_2d must be finite Tx2")
        out["ball_2d"] = ball
    if "spin_class" in raw and raw["spin_class"] is not None:
        if raw["spin_class"] not in (-1, 1):
            raise DataError(f"annotation {path}: spin_class must be +-1")
        out["spin_class"] = int(raw["spin_class"])
    return out
