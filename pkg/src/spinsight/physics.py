"""Ball flight simulation: gravity, quadratic drag, Magnus lift, and a
spin-dependent bounce.

Flight model (spin in Hz, world frame, constant between bounces):

    a = (0, 0, -g) - k_D * |v| * v + (k_M / m) * (w x v)

Bounce model (instantaneous, at table contact): the vertical velocity is
reflected and scaled by the restitution, and spin-induced friction adds a
horizontal impulse

    dv = (k_F / m) * (w_fwd * left + w_left * fwd)

where (fwd, left) is the horizontal frame of the instantaneous pre-contact
velocity. Topspin (w_left > 0 for motion along fwd) kicks the ball forward,
sidespin about the forward axis kicks it sideways. Spin is scaled by a
retention factor at each bounce.

The world origin sits at the table center on the playing surface, so the
surface plane is z = 0 and the floor is at z = -table_height. Contact is
tested against z = ball radius over the table polygon.

Integration runs at a fine rate of 500 Hz (classical RK4, with linear
sub-step refinement of the contact time); every 10th fine sample is a
50 Hz output frame. The integrator is vectorized over a batch of
trajectories; the scalar operations wrap the same kernel so both paths
share identical numerics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpinsightError
from .geometry import vec3

FINE_RATE_HZ = 500.0
FINE_DT = 1.0 / FINE_RATE_HZ
FRAME_RATE_HZ = 50.0
FINE_PER_FRAME = 10

# ITTF table dimensions (meters).
TABLE_LENGTH = 2.74
TABLE_WIDTH = 1.525
TABLE_HEIGHT = 0.76
NET_HEIGHT = 0.1525
NET_OVERHANG = 0.1525  # net posts sit this far outside the sidelines

# simulate() hard stops
MAX_SIM_TIME = 2.0
OUT_OF_BOUNDS_X = 2.5


class NotInContact(SpinsightError):
    """bounce() called on a state that is not touching the table surface."""


@dataclass(frozen=True)
class PhysicsParams:
    """Simulation constants.

    The aerodynamic and bounce factors are calibration stand-ins (the flight
    behavior, not the values, is the contract): drag from 0.5*rho*C_d*A/m
    with C_d = 0.4; magnus sized so 50 Hz of pure sidespin at 5 m/s deflects
    about 0.1 m over 1 m of flight; bounce_spin_impulse sized so 100 Hz of
    topspin adds 0.1 m/s of forward speed at the bounce (keeps the bounce
    kick of spin about the motion axis an order of magnitude below the
    Magnus deviations of the other two components).
    """

    gravity: float = 9.81          # m/s^2
    mass: float = 0.0027           # kg
    radius: float = 0.02           # m
    drag: float = 0.141            # k_D, 1/m
    magnus: float = 5.4e-5         # k_M, per Hz: accel = magnus/mass * (w x v)
    bounce_spin_impulse: float = 2.7e-6    # k_F, N*s per Hz
    restitution: float = 0.89      # vertical restitution, in (0, 1)
    spin_retention: float = 0.7    # spin kept across a bounce, in (0, 1]
    table_length: float = TABLE_LENGTH
    table_width: float = TABLE_WIDTH
    table_height: float = TABLE_HEIGHT   # above the floor; surface plane is z = 0
    net_height: float = NET_HEIGHT

    def __post_init__(self):
        for name in ("mass", "radius", "table_length", "table_width",
                     "table_height", "net_height"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        # force factors may be zeroed to isolate individual effects
        for name in ("gravity", "drag", "magnus", "bounce_spin_impulse"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.restitution < 1.0:
            raise ValueError("restitution must be in (0, 1)")
        if not 0.0 < self.spin_retention <= 1.0:
            raise ValueError("spin_retention must be in (0, 1]")


@dataclass
class BallState:
    """Integration state: position (m), velocity (m/s), spin (Hz, world frame)."""

    r: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def copy(self) -> "BallState":
        return BallState(self.r.copy(), self.v.copy(), self.w.copy(), self.t)


@dataclass
class Trajectory:
    """Fine-rate (500 Hz) samples plus the 50 Hz output-frame view.

    bounce_index is the first fine sample at or after the (first) table
    contact; termination records why integration stopped. A trajectory with
    error set holds no samples.
    """

    t_fine: np.ndarray        # (N,)
    r_fine: np.ndarray        # (N, 3)
    v_fine: np.ndarray        # (N, 3)
    w_fine: np.ndarray        # (N, 3)
    bounce_index: int | None
    bounce_time: float | None
    bounce_point: np.ndarray | None
    n_bounces: int
    termination: str          # second_bounce | below_table_plane | out_of_bounds | time_limit
    error: str | None = None

    @property
    def n_fine(self) -> int:
        return self.t_fine.shape[0]

    @property
    def frame_indices(self) -> np.ndarray:
        return np.arange(0, self.n_fine, FINE_PER_FRAME)

    @property
    def n_frames(self) -> int:
        return self.frame_indices.shape[0]

    @property
    def t_frames(self) -> np.ndarray:
        return self.t_fine[self.frame_indices]

    @property
    def r_frames(self) -> np.ndarray:
        return self.r_fine[self.frame_indices]

    @property
    def bounce_frame_index(self) -> int | None:
        """First 50 Hz frame at/after contact, clamped into the frame range."""
        if self.bounce_index is None:
            return None
        frame = -(-self.bounce_index // FINE_PER_FRAME)  # ceil division
        return int(min(frame, self.n_frames - 1))


def acceleration(state: BallState, params: PhysicsParams) -> np.ndarray:
    """Net acceleration (m/s^2) from gravity, drag, and the Magnus force."""
    a = _accel(state.r[None, :], state.v[None, :], state.w[None, :], params)
    return a[0]


def _accel(R: np.ndarray, V: np.ndarray, W: np.ndarray,
           p: PhysicsParams) -> np.ndarray:
    speed = np.sqrt(np.sum(V * V, axis=1, keepdims=True))
    a = -p.drag * speed * V + (p.magnus / p.mass) * np.cross(W, V)
    a[:, 2] -= p.gravity
    return a


def _rk4(R: np.ndarray, V: np.ndarray, W: np.ndarray, dt,
         p: PhysicsParams) -> tuple[np.ndarray, np.ndarray]:
    """One classical RK4 step of (r, v); spin is constant in flight.

    dt may be a scalar or a per-row (K, 1) array.
    """
    k1r = V
    k1v = _accel(R, V, W, p)
    k2r = V + 0.5 * dt * k1v
    k2v = _accel(R + 0.5 * dt * k1r, k2r, W, p)
    k3r = V + 0.5 * dt * k2v
    k3v = _accel(R + 0.5 * dt * k2r, k3r, W, p)
    k4r = V + dt * k3v
    k4v = _accel(R + dt * k3r, k4r, W, p)
    Rn = R + (dt / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    Vn = V + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return Rn, Vn


def step_rk4(state: BallState, dt: float, params: PhysicsParams) -> BallState:
    """Advance one fine step in free flight."""
    Rn, Vn = _rk4(state.r[None, :], state.v[None, :], state.w[None, :], dt, params)
    return BallState(Rn[0], Vn[0], state.w.copy(), state.t + dt)


def _bounce_velocity(V: np.ndarray, W: np.ndarray,
                     p: PhysicsParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bounce map for rows at contact with v_z < 0."""
    h = np.hypot(V[:, 0], V[:, 1])
    safe = h > 1e-12
    hs = np.where(safe, h, 1.0)
    fwd_x, fwd_y = V[:, 0] / hs, V[:, 1] / hs
    left_x, left_y = -fwd_y, fwd_x
    w_fwd = W[:, 0] * fwd_x + W[:, 1] * fwd_y
    w_left = W[:, 0] * left_x + W[:, 1] * left_y
    scale = np.where(safe, p.bounce_spin_impulse / p.mass, 0.0)
    dvx = scale * (w_fwd * left_x + w_left * fwd_x)
    dvy = scale * (w_fwd * left_y + w_left * fwd_y)
    Vout = np.stack([V[:, 0] + dvx, V[:, 1] + dvy, -p.restitution * V[:, 2]], axis=1)
    return Vout, p.spin_retention * W


def bounce(state: BallState, params: PhysicsParams) -> BallState:
    """Apply the instantaneous bounce at table contact.

    Requires the ball to touch the surface plane (r.z <= radius within
    tolerance) over the table polygon with downward velocity.
    """
    r, v = state.r, state.v
    over = (abs(r[0]) <= params.table_length / 2.0
            and abs(r[1]) <= params.table_width / 2.0)
    if not over:
        raise NotInContact(f"contact point ({r[0]:.3f}, {r[1]:.3f}) not over the table")
    if r[2] - params.radius > 1e-9:
        raise NotInContact(f"ball center z={r[2]:.4f} m is above contact height")
    if not v[2] < 0.0:
        raise NotInContact("ball is not moving downward")
    Vout, Wout = _bounce_velocity(v[None, :], state.w[None, :], params)
    return BallState(r.copy(), Vout[0], Wout[0], state.t)


def simulate(init: BallState, params: PhysicsParams,
             max_t: float = MAX_SIM_TIME) -> Trajectory:
    """Integrate a single trajectory; see simulate_batch for the rules."""
    return simulate_batch(init.r[None, :], init.v[None, :], init.w[None, :],
                          params, max_t=max_t, t0=init.t)[0]


def simulate_batch(R0: np.ndarray, V0: np.ndarray, W0: np.ndarray,
                   params: PhysicsParams, max_t: float = MAX_SIM_TIME,
                   t0: float = 0.0) -> list[Trajectory]:
    """Integrate K trajectories in lockstep at the fine rate.

    Per trajectory: surface crossings are detected by the sign change of
    (r.z - radius), refined by linear interpolation inside the offending
    step; if the refined contact point lies over the table polygon the
    bounce is applied there and the remainder of the step is integrated
    from the post-bounce state. Integration stops at the second table
    contact, on dropping below the table plane (r.z < 0), on leaving
    |x| > 2.5 m, or at max_t. Starts at or below contact height are
    rejected with an error flag.
    """
    p = params
    K = R0.shape[0]
    n_steps = int(round(max_t * FINE_RATE_HZ))
    R = np.array(R0, dtype=np.float64)
    V = np.array(V0, dtype=np.float64)
    W = np.array(W0, dtype=np.float64)

    R_hist = np.zeros((K, n_steps + 1, 3))
    V_hist = np.zeros((K, n_steps + 1, 3))
    W_hist = np.zeros((K, n_steps + 1, 3))
    R_hist[:, 0], V_hist[:, 0], W_hist[:, 0] = R, V, W

    bad_start = R[:, 2] <= p.radius
    active = ~bad_start
    end_index = np.zeros(K, dtype=np.int64)
    termination = np.array(["time_limit"] * K, dtype=object)
    n_bounces = np.zeros(K, dtype=np.int64)
    bounce_index = np.full(K, -1, dtype=np.int64)
    bounce_time = np.full(K, np.nan)
    bounce_point = np.full((K, 3), np.nan)

    half_l, half_w = p.table_length / 2.0, p.table_width / 2.0

    for k in range(n_steps):
        if not active.any():
            break
        Rn, Vn = _rk4(R, V, W, FINE_DT, p)
        Wn = W.copy()

        gap_prev = R[:, 2] - p.radius
        gap_new = Rn[:, 2] - p.radius
        crossing = active & (gap_prev > 0.0) & (gap_new <= 0.0)
        if crossing.any():
            frac = np.zeros(K)
            frac[crossing] = gap_prev[crossing] / (gap_prev[crossing] - gap_new[crossing])
            Rc = R + frac[:, None] * (Rn - R)
            Vc = V + frac[:, None] * (Vn - V)
            over = (np.abs(Rc[:, 0]) <= half_l) & (np.abs(Rc[:, 1]) <= half_w)
            contact = crossing & over

            second = contact & (n_bounces >= 1)
            first = contact & (n_bounces == 0)
            if second.any():
                # record the contact state and stop
                Rn[second] = Rc[second]
                Vn[second] = Vc[second]
                end_index[second] = k + 1
                termination[second] = "second_bounce"
                n_bounces[second] += 1
                active &= ~second
            if first.any():
                idx = np.where(first)[0]
                Vb, Wb = _bounce_velocity(Vc[idx], W[idx], p)
                rest = (1.0 - frac[idx, None]) * FINE_DT
                Rr, Vr = _rk4(Rc[idx], Vb, Wb, rest, p)
                Rn[idx], Vn[idx], Wn[idx] = Rr, Vr, Wb
                n_bounces[idx] += 1
                bounce_index[idx] = k + 1
                bounce_time[idx] = t0 + (k + frac[idx]) * FINE_DT
                bounce_point[idx] = Rc[idx]

        R[active] = Rn[active]
        V[active] = Vn[active]
        W[active] = Wn[active]
        R_hist[active, k + 1] = R[active]
        V_hist[active, k + 1] = V[active]
        W_hist[active, k + 1] = W[active]

        below = active & (R[:, 2] < 0.0)
        if below.any():
            end_index[below] = k + 1
            termination[below] = "below_table_plane"
            active &= ~below
        out = active & (np.abs(R[:, 0]) > OUT_OF_BOUNDS_X)
        if out.any():
            end_index[out] = k + 1
            termination[out] = "out_of_bounds"
            active &= ~out

    end_index[active] = n_steps

    out: list[Trajectory] = []
    for i in range(K):
        if bad_start[i]:
            empty = np.zeros((0, 3))
            out.append(Trajectory(
                t_fine=np.zeros(0), r_fine=empty, v_fine=empty.copy(),
                w_fine=empty.copy(), bounce_index=None, bounce_time=None,
                bounce_point=None, n_bounces=0, termination="invalid_start",
                error="invalid_start"))
            continue
        n = int(end_index[i]) + 1
        has_bounce = bounce_index[i] >= 0
        out.append(Trajectory(
            t_fine=t0 + np.arange(n) * FINE_DT,
            r_fine=R_hist[i, :n].copy(),
            v_fine=V_hist[i, :n].copy(),
            w_fine=W_hist[i, :n].copy(),
            bounce_index=int(bounce_index[i]) if has_bounce else None,
            bounce_time=float(bounce_time[i]) if has_bounce else None,
            bounce_point=bounce_point[i].copy() if has_bounce else None,
            n_bounces=int(n_bounces[i]),
            termination=str(termination[i])))
    return out


def is_valid(traj: Trajectory, cam, image_size: tuple[int, int]) -> bool:
    """Trajectory validity rule for dataset generation.

    Valid: starts left of the net, bounces exactly once on the right half
    of the table, ends on the right, every 50 Hz frame projects inside the
    image, and the frame count is in [8, 40].
    """
    from . import camera as camera_mod

    if traj.error is not None or traj.n_fine == 0:
        return False
    if not traj.r_fine[0, 0] < 0.0:
        return False
    if traj.n_bounces != 1 or traj.bounce_point is None:
        return False
    bx, by = traj.bounce_point[0], traj.bounce_point[1]
    if not (0.0 < bx <= TABLE_LENGTH / 2.0 and abs(by) <= TABLE_WIDTH / 2.0):
        return False
    if not traj.r_fine[-1, 0] > 0.0:
        return False
    if not 8 <= traj.n_frames <= 40:
        return False
    uv, depth = camera_mod.project_points(cam, traj.r_frames)
    W, H = image_size
    inside = ((depth > 0.0) & (uv[:, 0] >= 0.0) & (uv[:, 0] < W)
              & (uv[:, 1] >= 0.0) & (uv[:, 1] < H))
    return bool(inside.all())


# Initial state of the single-spin-component study: a flat, fast shot down
# the table midline (zero initial lateral velocity, so the ball frame
# coincides with the world axes and spin components can be set directly).
STUDY_INIT_R = (-1.4, 0.0, 0.1)
STUDY_INIT_V = (7.0, 0.0, 1.0)
STUDY_SPIN_HZ = -100.0


def single_spin_component_runs(params: PhysicsParams | None = None,
                               spin_hz: float = STUDY_SPIN_HZ,
                               max_t: float = MAX_SIM_TIME) -> dict[str, Trajectory]:
    """Simulate the same shot spin-free and with one ball-frame spin
    component at a time set to spin_hz (forward / left / up axes).

    With the study's zero-lateral launch the ball frame equals the world
    frame, so the component runs are world-axis spins.
    """
    p = params if params is not None else PhysicsParams()
    r0, v0 = vec3(*STUDY_INIT_R), vec3(*STUDY_INIT_V)
    spins = {
        "none": vec3(0.0, 0.0, 0.0),
        "forward": vec3(spin_hz, 0.0, 0.0),
        "left": vec3(0.0, spin_hz, 0.0),
        "up": vec3(0.0, 0.0, spin_hz),
    }
    R0 = np.stack([r0] * 4)
    V0 = np.stack([v0] * 4)
    W0 = np.stack(list(spins.values()))
    trajs = simulate_batch(R0, V0, W0, p, max_t=max_t)
    return dict(zip(spins.keys(), trajs))


def max_deviation(a: Trajectory, b: Trajectory) -> float:
    """Max 3D distance between two runs over their common 50 Hz frames."""
    n = min(a.n_frames, b.n_frames)
    d = a.r_frames[:n] - b.r_frames[:n]
    return float(np.sqrt(np.sum(d * d, axis=1)).max())
