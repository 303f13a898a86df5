import numpy as np
import pytest
from dataclasses import replace

from spinsight import camera
from spinsight.geometry import vec3
from spinsight.physics import (
    FINE_DT,
    BallState,
    NotInContact,
    PhysicsParams,
    acceleration,
    bounce,
    is_valid,
    max_deviation,
    simulate,
    simulate_batch,
    single_spin_component_runs,
    step_rk4,
)

P = PhysicsParams()
BALLISTIC = replace(P, drag=0.0, magnus=0.0)


def state(r, v, w=(0, 0, 0), t=0.0):
    return BallState(vec3(*r), vec3(*v), vec3(*w), t)


# ---------------------------------------------------------------- acceleration

def test_gravity_only():
    a = acceleration(state((0, 0, 1), (0, 0, 0)), P)
    np.testing.assert_allclose(a, [0, 0, -9.81], atol=1e-15)


def test_topspin_accelerates_downward():
    # spin about +y with motion along +x: Magnus points straight down
    p = replace(P, drag=0.0)
    wy, vx = 80.0, 5.0
    a = acceleration(state((0, 0, 1), (vx, 0, 0), (0, wy, 0)), p)
    np.testing.assert_allclose(a, [0, 0, -p.gravity - p.magnus / p.mass * wy * vx],
                               atol=1e-12)


def test_spin_parallel_to_velocity_no_magnus():
    p = replace(P, drag=0.0)
    a = acceleration(state((0, 0, 1), (3, 2, -1), (30, 20, -10)), p)
    np.testing.assert_allclose(a, [0, 0, -p.gravity], atol=1e-12)


def test_magnus_orthogonal_to_velocity():
    rng = np.random.default_rng(5)
    p = replace(P, drag=0.0, gravity=0.0)
    for _ in range(200):
        s = state(rng.uniform(-1, 1, 3), rng.uniform(-8, 8, 3), rng.uniform(-100, 100, 3))
        F = acceleration(s, p) * p.mass
        nF, nv = np.linalg.norm(F), np.linalg.norm(s.v)
        assert abs(F @ s.v) < 1e-12 * max(nF * nv, 1e-30)


# ------------------------------------------------------------------- step_rk4

def test_ballistic_matches_parabola():
    s = state((0, 0, 1), (1, 0, 0))
    cur = s.copy()
    n = int(round(1.0 / FINE_DT))
    for _ in range(n):
        cur = step_rk4(cur, FINE_DT, BALLISTIC)
    t = n * FINE_DT
    expected = s.r + s.v * t + 0.5 * np.array([0, 0, -P.gravity]) * t * t
    assert np.max(np.abs(cur.r - expected)) < 1e-6


def test_rk4_fourth_order_convergence():
    # fast spin-rich flight against a much finer reference; halving dt must
    # cut the global error by ~16x (a gentler trajectory leaves the error at
    # the 1e-12 roundoff floor where the ratio is meaningless)
    s0 = state((0, 0, 1), (25, 5, 8), (80, -60, 40))

    def integrate(dt, t_end=0.5):
        cur = s0.copy()
        for _ in range(int(round(t_end / dt))):
            cur = step_rk4(cur, dt, P)
        return cur.r

    ref = integrate(FINE_DT / 32)
    err_full = np.linalg.norm(integrate(FINE_DT) - ref)
    err_half = np.linalg.norm(integrate(FINE_DT / 2) - ref)
    assert err_full / err_half >= 15.0


def test_zero_velocity_zero_gravity_fixed_point():
    p = replace(P, gravity=0.0)
    s = state((0.1, 0.2, 0.3), (0, 0, 0))
    out = step_rk4(s, FINE_DT, p)
    np.testing.assert_allclose(out.r, s.r, atol=0)
    np.testing.assert_allclose(out.v, s.v, atol=0)


# --------------------------------------------------------------------- bounce

def test_spinless_bounce_reflects_vertical():
    s = state((0.5, 0.1, P.radius), (3, -1, -2))
    out = bounce(s, P)
    np.testing.assert_allclose(out.v, [3, -1, P.restitution * 2], atol=1e-15)
    np.testing.assert_allclose(out.w, [0, 0, 0], atol=0)


def test_topspin_bounce_speeds_up():
    w_left = 60.0  # topspin for motion along +x
    s = state((0.5, 0, P.radius), (4, 0, -1.5), (0, w_left, 0))
    out = bounce(s, P)
    gain = P.bounce_spin_impulse / P.mass * w_left
    np.testing.assert_allclose(out.v[0], 4 + gain, atol=1e-12)
    assert out.v[0] > s.v[0]
    np.testing.assert_allclose(out.w, P.spin_retention * s.w, atol=1e-15)


def test_forward_axis_spin_kicks_sideways():
    # spin about the motion axis: outgoing velocity gains a lateral
    # component along the left axis only, magnitude k_F/m * w_fwd
    w_fwd = 50.0
    s = state((0.5, 0, P.radius), (3, 0, -1), (w_fwd, 0, 0))
    out = bounce(s, P)
    np.testing.assert_allclose(out.v[0], 3.0, atol=1e-12)
    np.testing.assert_allclose(out.v[1], P.bounce_spin_impulse / P.mass * w_fwd,
                               atol=1e-12)


def test_bounce_preconditions():
    with pytest.raises(NotInContact):
        bounce(state((0.5, 0, 0.5), (1, 0, -1)), P)          # too high
    with pytest.raises(NotInContact):
        bounce(state((0.5, 0, P.radius), (1, 0, 1)), P)      # moving up
    with pytest.raises(NotInContact):
        bounce(state((2.0, 0, P.radius), (1, 0, -1)), P)     # off the table


# ------------------------------------------------------------------- simulate

def test_simulate_contact_time_matches_analytic_root():
    r0, v0 = (-1.0, 0.0, 0.3), (2.0, 0.0, 1.0)
    traj = simulate(state(r0, v0), BALLISTIC)
    # z(t) = z0 + vz t - g/2 t^2 reaches the contact height (ball radius)
    g = P.gravity
    a, b, c = -g / 2, v0[2], r0[2] - P.radius
    t_contact = (-b - np.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert traj.bounce_time is not None
    assert abs(traj.bounce_time - t_contact) < 2e-3
    # flight is exactly parabolic before the bounce
    n = traj.bounce_index - 1
    t = traj.t_fine[:n]
    expected = np.array(r0) + np.outer(t, v0) + 0.5 * np.outer(t * t, [0, 0, -g])
    assert np.max(np.abs(traj.r_fine[:n] - expected)) < 1e-6


def test_simulate_invalid_start():
    traj = simulate(state((0, 0, 0.01), (1, 0, 0)), P)
    assert traj.error == "invalid_start"
    assert traj.n_fine == 0


def test_energy_conserved_without_air_forces():
    p = BALLISTIC
    s = state((-1.4, 0, 0.4), (0.8, 0.1, 3.5))
    traj = simulate(s, p, max_t=1.0)
    section = traj.r_fine[:traj.bounce_index] if traj.bounce_index else traj.r_fine
    vsec = traj.v_fine[:len(section)]
    E = 0.5 * p.mass * np.sum(vsec**2, axis=1) + p.mass * p.gravity * section[:, 2]
    assert E.max() - E.min() < 1e-6


def test_drag_only_horizontal_speed_nonincreasing():
    traj = simulate(state((-1.4, 0, 0.5), (6, 1, 1)), replace(P, magnus=0.0))
    h = np.hypot(traj.v_fine[:, 0], traj.v_fine[:, 1])
    pre = h[:traj.bounce_index] if traj.bounce_index else h
    assert np.all(np.diff(pre) <= 1e-12)


def test_mirror_symmetry():
    r0, v0, w0 = (-1.4, 0.2, 0.3), (6, 0.8, 1.2), (40, -70, 25)
    a = simulate(state(r0, v0, w0), P)
    b = simulate(state((r0[0], -r0[1], r0[2]), (v0[0], -v0[1], v0[2]),
                       (-w0[0], w0[1], -w0[2])), P)
    assert a.n_fine == b.n_fine
    mirrored = b.r_fine * np.array([1.0, -1.0, 1.0])
    assert np.max(np.abs(a.r_fine - mirrored)) < 1e-9


def test_batch_matches_scalar_path():
    rng = np.random.default_rng(0)
    R0 = np.column_stack([rng.uniform(-1.6, -1.2, 5), rng.uniform(-0.6, 0.6, 5),
                          rng.uniform(0.1, 0.5, 5)])
    V0 = np.column_stack([rng.uniform(3, 8, 5), rng.uniform(-1.5, 1.5, 5),
                          rng.uniform(-1, 3, 5)])
    W0 = rng.uniform(-100, 100, (5, 3))
    batch = simulate_batch(R0, V0, W0, P)
    for i, traj in enumerate(batch):
        single = simulate(BallState(R0[i], V0[i], W0[i]), P)
        assert single.n_fine == traj.n_fine
        assert single.termination == traj.termination
        np.testing.assert_array_equal(single.r_fine, traj.r_fine)


# ------------------------------------------------------------------- validity

CAM = camera.default_camera()


def test_is_valid_accepts_serve():
    traj = simulate(state((-1.4, 0, 0.2), (6, 0, 1)), P)
    assert traj.n_bounces == 1
    assert is_valid(traj, CAM, CAM.image_size)


def test_is_valid_rejects_two_bounces():
    # lob that bounces twice on the table
    traj = simulate(state((-1.3, 0, 0.3), (2.2, 0, 2.2)), P)
    assert traj.n_bounces == 2
    assert traj.termination == "second_bounce"
    assert not is_valid(traj, CAM, CAM.image_size)


def test_is_valid_rejects_wrong_half_bounce():
    traj = simulate(state((-1.4, 0, 0.45), (1.8, 0, -1.0)), P)
    assert traj.n_bounces >= 1 and traj.bounce_point[0] < 0
    assert not is_valid(traj, CAM, CAM.image_size)


def test_is_valid_rejects_error_trajectory():
    traj = simulate(state((0, 0, 0.0), (1, 0, 0)), P)
    assert not is_valid(traj, CAM, CAM.image_size)


# --------------------------------------------------- spin component study

def test_spin_component_observability_ordering():
    runs = single_spin_component_runs()
    base = runs["none"]
    assert base.n_bounces == 1
    dev = {k: max_deviation(runs[k], base) for k in ("forward", "left", "up")}
    assert dev["left"] > 0.1 and dev["up"] > 0.1
    assert dev["forward"] < 0.1 * min(dev["left"], dev["up"])
