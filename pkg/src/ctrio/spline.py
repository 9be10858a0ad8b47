"""Uniform-knot cumulative cubic B-spline over SE(3) control poses.

A query at time t in segment [t_i, t_{i+1}) blends control poses
(i-1, i, i+1, i+2) through products of exponentials of the incremental twists
between consecutive control poses. Pose, velocity and acceleration are
available in closed form at any time inside the queryable domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose, compose, hat6, inverse, se3_exp_matrix, se3_log)

# Cumulative De Boor-Cox blending matrix for the uniform cubic B-spline;
# basis = C @ [1, u, u^2, u^3]^T.
BASIS_MATRIX = np.array([
    [6.0, 0.0, 0.0, 0.0],
    [5.0, 3.0, -3.0, 1.0],
    [1.0, 3.0, 3.0, -2.0],
    [0.0, 0.0, 0.0, 1.0],
]) / 6.0


class DomainError(ValueError):
    """Query time outside the spline's queryable interval."""


@dataclass
class ControlPose:
    """Spline knot: pose at time index*delta_t plus IMU bias states."""

    index: int
    time: float
    pose: Pose
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)


@dataclass
class BasisValues:
    """Cumulative basis vector and its first two time derivatives."""

    b: np.ndarray
    db: np.ndarray
    ddb: np.ndarray


@dataclass
class PoseWithDerivatives:
    pose: Pose
    d_pose: np.ndarray   # 4x4, per second
    dd_pose: np.ndarray  # 4x4, per second^2


def basis(u: float, delta_t: float) -> BasisValues:
    """Cumulative basis values at local coordinate u in [0, 1)."""
    b = BASIS_MATRIX @ np.array([1.0, u, u * u, u * u * u])
    db = (BASIS_MATRIX @ np.array([0.0, 1.0, 2.0 * u, 3.0 * u * u])) / delta_t
    ddb = (BASIS_MATRIX @ np.array([0.0, 0.0, 2.0, 6.0 * u])) / delta_t**2
    return BasisValues(b, db, ddb)


class Trajectory:
    """Cumulative cubic B-spline with uniform knot spacing delta_t.

    Control poses carry consecutive integer indices (negative allowed); knot
    times are index*delta_t exactly. A query at t needs the four control poses
    with indices {i-1, i, i+1, i+2} where i = floor(t/delta_t).
    """

    def __init__(self, delta_t: float, control_poses=None):
        if delta_t <= 0.0:
            raise ValueError("delta_t must be positive")
        self.delta_t = float(delta_t)
        self.control_poses: list[ControlPose] = []
        for cp in control_poses or []:
            self.insert_control_pose(cp)

    @property
    def first_index(self) -> int:
        return self.control_poses[0].index

    @property
    def last_index(self) -> int:
        return self.control_poses[-1].index

    def make_control_pose(self, index: int, pose: Pose, gyro_bias=None,
                          accel_bias=None) -> ControlPose:
        return ControlPose(index, index * self.delta_t, pose,
                           np.zeros(3) if gyro_bias is None else gyro_bias,
                           np.zeros(3) if accel_bias is None else accel_bias)

    def insert_control_pose(self, cp: ControlPose) -> None:
        if self.control_poses and cp.index != self.last_index + 1:
            raise ValueError(
                f"control pose index {cp.index} is not consecutive "
                f"(last index {self.last_index})")
        if not math.isclose(cp.time, cp.index * self.delta_t,
                            rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(
                f"control pose time {cp.time} != index*delta_t "
                f"{cp.index * self.delta_t}")
        self.control_poses.append(cp)

    def control_pose(self, index: int) -> ControlPose:
        return self.control_poses[index - self.first_index]

    def set_pose(self, index: int, pose: Pose) -> None:
        self.control_pose(index).pose = pose

    def domain(self) -> tuple[float, float]:
        """Queryable half-open interval [t_min, t_max)."""
        if len(self.control_poses) < 4:
            raise DomainError("at least 4 control poses required before any query")
        return ((self.first_index + 1) * self.delta_t,
                (self.last_index - 1) * self.delta_t)

    def locate(self, t: float) -> tuple[int, float]:
        """Map a time to (segment index i, local coordinate u in [0, 1))."""
        t_min, t_max = self.domain()
        if not (t_min <= t < t_max):
            raise DomainError(
                f"t={t} outside queryable interval [{t_min}, {t_max})")
        x = t / self.delta_t
        i = int(math.floor(x))
        # Clamp against floating-point jitter at the domain edges.
        i = min(max(i, self.first_index + 1), self.last_index - 2)
        u = t / self.delta_t - i
        return i, max(u, 0.0)

    def segment_indices(self, i: int) -> tuple[int, int, int, int]:
        return (i - 1, i, i + 1, i + 2)

    def _segment_matrices(self, i: int):
        cps = [self.control_pose(k) for k in self.segment_indices(i)]
        t0 = cps[0].pose.matrix()
        twists = []
        for a, b in zip(cps[:-1], cps[1:]):
            twists.append(se3_log(compose(inverse(a.pose), b.pose)))
        return t0, twists

    def evaluate_pose(self, t: float) -> Pose:
        i, u = self.locate(t)
        bv = basis(u, self.delta_t)
        t0, twists = self._segment_matrices(i)
        m = t0
        for j in range(3):
            m = m @ se3_exp_matrix(bv.b[j + 1] * twists[j])
        return Pose.from_matrix(m)

    def evaluate_derivatives(self, t: float) -> PoseWithDerivatives:
        i, u = self.locate(t)
        bv = basis(u, self.delta_t)
        t0, twists = self._segment_matrices(i)

        a = [se3_exp_matrix(bv.b[j + 1] * twists[j]) for j in range(3)]
        om = [hat6(tw) for tw in twists]
        da = [a[j] @ om[j] * bv.db[j + 1] for j in range(3)]
        dda = [da[j] @ om[j] * bv.db[j + 1] + a[j] @ om[j] * bv.ddb[j + 1]
               for j in range(3)]

        pose_m = t0 @ a[0] @ a[1] @ a[2]
        d_pose = t0 @ (da[0] @ a[1] @ a[2]
                       + a[0] @ da[1] @ a[2]
                       + a[0] @ a[1] @ da[2])
        # Full second-order product rule, including the mixed terms.
        dd_pose = t0 @ (dda[0] @ a[1] @ a[2]
                        + a[0] @ dda[1] @ a[2]
                        + a[0] @ a[1] @ dda[2]
                        + 2.0 * (da[0] @ da[1] @ a[2]
                                 + da[0] @ a[1] @ da[2]
                                 + a[0] @ da[1] @ da[2]))
        return PoseWithDerivatives(Pose.from_matrix(pose_m), d_pose, dd_pose)

    def window(self, t0: float, t1: float) -> list[int]:
        """Control-pose indices with local support over queries in [t0, t1)."""
        if t1 <= t0:
            raise ValueError("empty window: t1 <= t0")
        i0, _ = self.locate(t0)
        i1, _ = self.locate(np.nextafter(t1, -np.inf))
        return list(range(i0 - 1, i1 + 3))
