"""World and per-trajectory ball coordinate systems.

The world frame has its origin at the table center on the playing surface,
x along the table's long axis, z up. The ball frame is built once per
trajectory from the first two ball positions: its forward axis follows the
initial horizontal movement direction, its up axis stays world-z, and the
left axis completes a right-handed basis. Spin vectors are free vectors and
transform by rotation only; positions subtract the frame origin first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

# Horizontal displacements below this are treated as directionless
# (well under the float-noise scale of any plausible trajectory).
DEGENERATE_EPS = 1e-9


class DegenerateDirection(NumericalError):
    """Raised when the first two positions have no horizontal displacement."""


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


@dataclass(frozen=True)
class BallFrame:
    """Right-handed orthonormal frame anchored at a trajectory's start.

    forward: unit vector along the initial horizontal movement (zero z).
    left:    up x forward, in the table plane.
    up:      world z, (0, 0, 1).

    Ball-frame spin components are (forward, left, up); the component about
    the left axis is the top-/backspin component (positive = topspin for a
    ball moving along forward).
    """

    origin: np.ndarray
    forward: np.ndarray
    left: np.ndarray
    up: np.ndarray = field(default_factory=lambda: vec3(0.0, 0.0, 1.0))

    @property
    def rotation(self) -> np.ndarray:
        """3x3 matrix with rows (forward, left, up); maps world to ball axes."""
        return np.stack([self.forward, self.left, self.up])


def ball_frame(p0: np.ndarray, p1: np.ndarray) -> BallFrame:
    """Build the per-trajectory frame from the first two ball positions."""
    delta = np.array([p1[0] - p0[0], p1[1] - p0[1], 0.0])
    norm = float(np.hypot(delta[0], delta[1]))
    if norm <= DEGENERATE_EPS:
        raise DegenerateDirection(
            f"horizontal displacement {norm:.3e} m is below {DEGENERATE_EPS} m"
        )
    forward = delta / norm
    up = vec3(0.0, 0.0, 1.0)
    left = np.cross(up, forward)
    return BallFrame(origin=np.asarray(p0, dtype=np.float64).copy(),
                     forward=forward, left=left, up=up)


def world_to_ball(v: np.ndarray, frame: BallFrame) -> np.ndarray:
    """Rotate a free world vector (velocity, spin) into ball-frame components."""
    return frame.rotation @ np.asarray(v, dtype=np.float64)


def ball_to_world(v: np.ndarray, frame: BallFrame) -> np.ndarray:
    """Inverse of world_to_ball; orthonormality makes this the transpose."""
    return frame.rotation.T @ np.asarray(v, dtype=np.float64)


def world_point_to_ball(p: np.ndarray, frame: BallFrame) -> np.ndarray:
    """Transform a world position: subtract the origin, then rotate."""
    return frame.rotation @ (np.asarray(p, dtype=np.float64) - frame.origin)


def ball_point_to_world(p: np.ndarray, frame: BallFrame) -> np.ndarray:
    return frame.rotation.T @ np.asarray(p, dtype=np.float64) + frame.origin
