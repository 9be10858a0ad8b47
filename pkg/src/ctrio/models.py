"""Sensor models and residuals.

Generative model: body-frame linear velocity, angular velocity and specific
force are synthesized from the spline trajectory and compared against radar
radial-velocity measurements and raw IMU samples. Outliers (moving objects)
are handled by a Cauchy robust loss on the radar residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, vee
from .spline import Trajectory

STANDARD_GRAVITY = 9.80665


@dataclass
class ImuMeasurement:
    t: float
    gyro: np.ndarray    # rad/s
    accel: np.ndarray   # m/s^2

    def __post_init__(self):
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)


@dataclass
class RadarTarget:
    """One radar return: range (m), radial velocity (m/s), azimuth and
    elevation (rad) in the sensor frame."""

    range: float
    radial_velocity: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not self.range > 0.0:
            raise ValueError(f"target range must be positive, got {self.range}")
        if abs(self.azimuth) > np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi]")
        if abs(self.elevation) > np.pi / 2.0:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")

    def direction(self) -> np.ndarray:
        """Unit vector from sensor to target in the sensor frame."""
        ca, sa = np.cos(self.azimuth), np.sin(self.azimuth)
        ce, se = np.cos(self.elevation), np.sin(self.elevation)
        return np.array([ca * ce, sa * ce, se])


@dataclass
class RadarScan:
    t: float
    sensor_id: str
    targets: list[RadarTarget] = field(default_factory=list)


@dataclass
class RadarExtrinsics:
    """Fixed sensor-to-vehicle transform from extrinsic calibration."""

    sensor_id: str
    pose: Pose


@dataclass
class BodyKinematics:
    """Vehicle-frame velocity, angular rate and specific force."""

    v_v: np.ndarray       # m/s
    omega_v: np.ndarray   # rad/s
    a_v: np.ndarray       # m/s^2


@dataclass
class NoiseModel:
    sigma_vr: float = 0.1        # m/s
    sigma_gyro: float = 1e-3     # rad/s, per sample
    sigma_accel: float = 1e-2    # m/s^2, per sample
    sigma_bg: float = 1e-5       # rad/s, random walk per update
    sigma_ba: float = 1e-4       # m/s^2, random walk per update
    cauchy_scale: float = 3.0    # in sigma_vr-normalized units
    gravity_w: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, STANDARD_GRAVITY]))

    def __post_init__(self):
        self.gravity_w = np.asarray(self.gravity_w, dtype=float)
        for name in ("sigma_vr", "sigma_gyro", "sigma_accel",
                     "sigma_bg", "sigma_ba", "cauchy_scale"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


def kinematics_from_derivatives(pose_m: np.ndarray, d_pose: np.ndarray,
                                dd_pose: np.ndarray,
                                gravity_w: np.ndarray) -> BodyKinematics:
    r = pose_m[:3, :3]
    dr = d_pose[:3, :3]
    dt = d_pose[:3, 3]
    ddt = dd_pose[:3, 3]
    v_v = r.T @ dt
    omega_v = vee(r.T @ dr)  # vee antisymmetrizes
    a_v = r.T @ (ddt + np.asarray(gravity_w, dtype=float))
    return BodyKinematics(v_v, omega_v, a_v)


def body_kinematics(traj: Trajectory, t: float,
                    gravity_w: np.ndarray) -> BodyKinematics:
    pwd = traj.evaluate_derivatives(t)
    return kinematics_from_derivatives(pwd.pose.matrix(), pwd.d_pose,
                                       pwd.dd_pose, gravity_w)


def sensor_velocity(kin: BodyKinematics, ext: RadarExtrinsics) -> np.ndarray:
    """Linear velocity of the radar sensor, expressed in the sensor frame."""
    r_vs = ext.pose.rotation
    t_vs = ext.pose.translation
    return r_vs.T @ (kin.v_v + np.cross(kin.omega_v, t_vs))


def predict_radial_velocity(kin: BodyKinematics, ext: RadarExtrinsics,
                            target: RadarTarget) -> float:
    """Radial velocity a static target would report: the negated projection of
    the sensor velocity onto the sensor-to-target direction."""
    return float(-sensor_velocity(kin, ext) @ target.direction())


def radial_velocity_residual(measured: float, predicted: float) -> float:
    return measured - predicted


def imu_residuals(meas: ImuMeasurement, kin: BodyKinematics,
                  gyro_bias: np.ndarray,
                  accel_bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e_gyro = meas.gyro - kin.omega_v - np.asarray(gyro_bias, dtype=float)
    e_accel = meas.accel - kin.a_v - np.asarray(accel_bias, dtype=float)
    return e_gyro, e_accel


def bias_residuals(cp_i, cp_i1, model: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    """Random-walk errors between the bias states of two control poses."""
    e_bg = (cp_i.gyro_bias - cp_i1.gyro_bias) / model.sigma_bg
    e_ba = (cp_i.accel_bias - cp_i1.accel_bias) / model.sigma_ba
    return e_bg, e_ba


def cauchy(s: float, scale: float = 1.0) -> tuple[float, float]:
    """Cauchy loss on a squared normalized residual s >= 0.

    Returns (cost, weight) with cost = c^2 log(1 + s/c^2) and
    weight = d cost / d s = 1 / (1 + s/c^2).
    """
    c2 = scale * scale
    x = s / c2
    return c2 * np.log1p(x), 1.0 / (1.0 + x)
