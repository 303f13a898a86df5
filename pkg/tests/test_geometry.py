import numpy as np
import pytest

from spinsight.geometry import (
    DegenerateDirection,
    ball_frame,
    ball_point_to_world,
    ball_to_world,
    vec3,
    world_point_to_ball,
    world_to_ball,
)


def random_frame(rng):
    p0 = rng.uniform(-2, 2, 3)
    p1 = p0 + np.append(rng.uniform(-1, 1, 2), rng.uniform(-0.5, 0.5))
    while np.hypot(*(p1 - p0)[:2]) < 1e-3:
        p1 = p0 + np.append(rng.uniform(-1, 1, 2), rng.uniform(-0.5, 0.5))
    return ball_frame(p0, p1)


def test_axis_aligned_motion():
    f = ball_frame(vec3(0, 0, 1), vec3(0.1, 0, 1))
    np.testing.assert_allclose(f.forward, [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(f.left, [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(f.up, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(f.origin, [0, 0, 1])


def test_cross_product_orientation():
    # motion along +y: left axis must be -x (up x forward)
    f = ball_frame(vec3(0, 0, 1), vec3(0, 0.1, 1.05))
    np.testing.assert_allclose(f.forward, [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(f.left, [-1, 0, 0], atol=1e-15)


def test_vertical_start_degenerate():
    with pytest.raises(DegenerateDirection):
        ball_frame(vec3(0, 0, 1), vec3(0, 0, 1.2))
    with pytest.raises(DegenerateDirection):
        ball_frame(vec3(0.5, 0.5, 1), vec3(0.5, 0.5, 1))


def test_frame_invariants_random():
    rng = np.random.default_rng(7)
    for _ in range(200):
        f = random_frame(rng)
        for e in (f.forward, f.left, f.up):
            assert abs(np.linalg.norm(e) - 1.0) < 1e-12
        assert abs(f.forward @ f.left) < 1e-12
        assert abs(f.forward @ f.up) < 1e-12
        assert abs(f.left @ f.up) < 1e-12
        np.testing.assert_allclose(np.cross(f.forward, f.left), f.up, atol=1e-12)
        np.testing.assert_allclose(f.up, [0, 0, 1], atol=0)
        assert f.forward[2] == 0.0


def test_frame_scale_invariance():
    p0 = vec3(0.3, -0.2, 0.5)
    a = ball_frame(p0, p0 + vec3(0.04, 0.03, 0.2))
    b = ball_frame(p0, p0 + vec3(0.4, 0.3, 0.2))
    np.testing.assert_allclose(a.forward, b.forward, atol=1e-15)
    np.testing.assert_allclose(a.left, b.left, atol=1e-15)


def test_spin_z_component_fixed():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = random_frame(rng)
        w = rng.uniform(-100, 100)
        out = world_to_ball(vec3(0, 0, w), f)
        np.testing.assert_allclose(out, [0, 0, w], atol=1e-12)


def test_basis_projection():
    rng = np.random.default_rng(4)
    f = random_frame(rng)
    np.testing.assert_allclose(world_to_ball(f.forward, f), [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(world_to_ball(f.left, f), [0, 1, 0], atol=1e-12)


def test_round_trip_identity():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        f = random_frame(rng)
        v = rng.uniform(-100, 100, 3)
        assert np.max(np.abs(ball_to_world(world_to_ball(v, f), f) - v)) < 1e-12
        assert np.max(np.abs(world_to_ball(ball_to_world(v, f), f) - v)) < 1e-12


def test_rotation_preserves_norm():
    rng = np.random.default_rng(12)
    for _ in range(500):
        f = random_frame(rng)
        v = rng.uniform(-10, 10, 3)
        assert abs(np.linalg.norm(world_to_ball(v, f)) - np.linalg.norm(v)) < 1e-12


def test_point_transforms_use_origin():
    f = ball_frame(vec3(1, 2, 0.5), vec3(1.5, 2, 0.6))
    np.testing.assert_allclose(world_point_to_ball(f.origin, f), [0, 0, 0], atol=1e-15)
    p = vec3(1.3, 2.4, 0.9)
    np.testing.assert_allclose(ball_point_to_world(world_point_to_ball(p, f), f),
                               p, atol=1e-12)
