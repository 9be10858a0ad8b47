"""Scenario simulator: ground-truth trajectories plus asynchronous multi-radar
and IMU measurement streams with configurable noise, bias random walks, and
moving-object outliers.

Ground truth is either an analytic constant-twist screw or a smooth
cumulative-B-spline built from a waypoint/figure-eight position curve; the
measurement models are the exact inverses of the estimator's generative model,
so noiseless streams evaluate to zero residuals at ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose, compose, hat6, inverse, rotation_from_rpy,
                       rpy_from_rotation, se3_exp)
from .logio import SensorLog
from .models import (BodyKinematics, ImuMeasurement, NoiseModel,
                     RadarExtrinsics, RadarScan, RadarTarget,
                     kinematics_from_derivatives, sensor_velocity)
from .spline import ControlPose, Trajectory

# Long-range automotive radar field of view and range window.
FOV_AZIMUTH = math.radians(60.0)
FOV_ELEVATION = math.radians(15.0)
RANGE_MIN = 1.0
RANGE_MAX = 100.0


@dataclass
class RadarSensorConfig:
    extrinsics: RadarExtrinsics
    rate: float = 20.0
    phase: float = 0.0
    max_targets: int = 255
    min_targets: int = 10


@dataclass
class ScenarioConfig:
    duration: float
    trajectory: dict
    radars: list[RadarSensorConfig]
    imu_rate: float = 200.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    outlier_fraction: float = 0.0
    outlier_velocity_bias: float = 0.0
    outlier_velocity_spread: float = 0.5
    seed: int = 0
    stationary_lead_in: float = 1.0
    # Duration of the smooth speed-up out of the lead-in; without it the
    # path-parameter rate jumps and the trajectory carries an unrealistic
    # acceleration spike.
    motion_ramp: float = 2.0
    gt_knot_dt: float = 0.2
    # Reported-angle/range accuracies (1 sigma); the radial velocity itself is
    # computed from the true direction plus sigma_vr noise.
    azimuth_sigma: float = math.radians(1.0)
    elevation_sigma: float = math.radians(2.0)
    range_sigma_floor: float = 0.5
    range_sigma_frac: float = 0.01
    # Global scale on all injected noise and bias walks; 0 gives exact streams.
    noise_scale: float = 1.0
    initial_gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.initial_gyro_bias = np.asarray(self.initial_gyro_bias, float)
        self.initial_accel_bias = np.asarray(self.initial_accel_bias, float)
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.imu_rate <= 0.0:
            raise ValueError("imu_rate must be positive")
        for r in self.radars:
            if r.rate <= 0.0:
                raise ValueError("radar rate must be positive")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")


class GroundTruth:
    """Continuous ground-truth trajectory queryable for pose/derivatives."""

    def __init__(self, kind: str, *, screw_twist=None, screw_base=None,
                 spline: Trajectory | None = None, duration: float = 0.0):
        self.kind = kind
        self.screw_twist = screw_twist
        self.screw_base = screw_base
        self.spline = spline
        self.duration = duration

    def _check(self, t: float):
        if not 0.0 <= t <= self.duration:
            raise ValueError(f"t={t} outside [0, {self.duration}]")

    def derivatives(self, t: float):
        """(pose 4x4, d_pose, dd_pose) at time t."""
        self._check(t)
        if self.kind == "screw":
            xi = self.screw_twist
            m = compose(se3_exp(t * xi), self.screw_base).matrix()
            h = hat6(xi)
            return m, h @ m, h @ h @ m
        pwd = self.spline.evaluate_derivatives(t)
        return pwd.pose.matrix(), pwd.d_pose, pwd.dd_pose

    def kinematics(self, t: float, gravity_w) -> BodyKinematics:
        m, dm, ddm = self.derivatives(t)
        return kinematics_from_derivatives(m, dm, ddm, gravity_w)

    def pose(self, t: float) -> Pose:
        return Pose.from_matrix(self.derivatives(t)[0])

    def sample(self, t: float):
        """(pose, body-frame velocity, attitude rpy) at time t."""
        m, dm, _ = self.derivatives(t)
        r = m[:3, :3]
        v_v = r.T @ dm[:3, 3]
        return Pose.from_matrix(m), v_v, rpy_from_rotation(r)


def _ramp_integral(x: float, ramp: float) -> float:
    """Distance covered during a smoothstep speed-up: speed follows
    3u^2 - 2u^3 with u = x/ramp, so acceleration starts and ends at zero and
    the covered distance reaches x - ramp/2 at the end of the ramp."""
    u = x / ramp
    return ramp * (u ** 3 - 0.5 * u ** 4)


def _ramped_path_time(x: float, ramp: float) -> float:
    """Path parameter s(x): zero before the lead-in ends, a smoothstep
    speed-up over `ramp` seconds, then unit rate. C2, so path acceleration is
    continuous and bounded by curve curvature plus 1.5/ramp per unit speed."""
    if x <= 0.0:
        return 0.0
    if ramp <= 0.0 or x >= ramp:
        return x - 0.5 * ramp
    return _ramp_integral(x, ramp)


def _trapezoid_path_time(x: float, ramp: float, motion_time: float) -> float:
    """Path parameter for a finite path: speed ramps 0 -> 1 over `ramp`
    seconds, holds, then ramps back to 0 so the vehicle comes to a smooth
    stop at `motion_time`. Covers motion_time - ramp units of path time."""
    total = motion_time - ramp
    if x <= 0.0:
        return 0.0
    if x >= motion_time:
        return total
    if ramp <= 0.0:
        return x
    if x < ramp:
        return _ramp_integral(x, ramp)
    if x > motion_time - ramp:
        return total - _ramp_integral(motion_time - x, ramp)
    return x - 0.5 * ramp


def _spline_from_positions(position_fn, yaw_fn, config: ScenarioConfig,
                           path_time_fn=None):
    """Ground-truth spline whose knots track a position curve that starts after
    the stationary lead-in. The first moving knot pose is normalized to the
    identity only in the sense that lead-in knots repeat it exactly."""
    dt = config.gt_knot_dt
    lead = config.stationary_lead_in
    if path_time_fn is None:
        def path_time_fn(x):
            return _ramped_path_time(x, config.motion_ramp)
    n = int(math.ceil((config.duration + 3 * dt) / dt)) + 2
    first = -2
    base = None
    traj = Trajectory(dt)
    for k in range(first, n + 1):
        t = k * dt
        s = path_time_fn(t - lead)
        p = np.asarray(position_fn(s), dtype=float)
        yaw = float(yaw_fn(s))
        pose = Pose(rotation_from_rpy([0.0, 0.0, yaw]), p)
        if base is None:
            base = inverse(pose)
        pose = compose(base, pose)
        traj.insert_control_pose(ControlPose(k, t, pose))
    return GroundTruth("spline", spline=traj, duration=config.duration)


def build_ground_truth(config: ScenarioConfig) -> GroundTruth:
    spec = dict(config.trajectory)
    kind = spec.pop("type")
    if kind == "constant_twist":
        xi = np.asarray(spec.get("twist"), dtype=float)
        base = Pose.identity()
        if "initial_translation" in spec:
            base = Pose(np.eye(3), np.asarray(spec["initial_translation"],
                                              float))
        return GroundTruth("screw", screw_twist=xi, screw_base=base,
                           duration=config.duration)
    if kind == "waypoint_spline":
        wps = np.asarray(spec["waypoints"], dtype=float)
        motion_time = config.duration - config.stationary_lead_in
        ramp = min(config.motion_ramp, 0.5 * motion_time)
        total = motion_time - ramp
        seg_t = total / max(len(wps) - 1, 1)

        def position(s):
            if s <= 0.0:
                return wps[0]
            k = min(int(s // seg_t), len(wps) - 2)
            a = min((s - k * seg_t) / seg_t, 1.0)
            return (1 - a) * wps[k] + a * wps[k + 1]

        def yaw(s):
            k = min(int(max(s, 0.0) // seg_t), len(wps) - 2)
            d = wps[k + 1] - wps[k]
            if np.hypot(d[0], d[1]) < 1e-9:
                return 0.0
            return math.atan2(d[1], d[0])

        return _spline_from_positions(
            position, yaw, config,
            path_time_fn=lambda x: _trapezoid_path_time(x, ramp, motion_time))
    if kind == "figure_eight":
        ax = float(spec.get("half_length", 30.0))
        ay = float(spec.get("half_width", 15.0))
        az = float(spec.get("altitude_amplitude", 2.0))
        period = float(spec.get("period", 30.0))
        w = 2.0 * math.pi / period

        def position(s):
            return np.array([ax * math.sin(w * s),
                             ay * math.sin(2.0 * w * s),
                             az * math.sin(w * s)])

        def yaw(s):
            vx = ax * w * math.cos(w * s)
            vy = 2.0 * ay * w * math.cos(2.0 * w * s)
            return math.atan2(vy, vx)

        return _spline_from_positions(position, yaw, config)
    raise ValueError(f"unknown trajectory type {kind!r}")


def sample_ground_truth(gt: GroundTruth, t: float):
    return gt.sample(t)


def generate(config: ScenarioConfig) -> tuple[GroundTruth, SensorLog]:
    """Simulate one scenario. Deterministic for a fixed config and seed."""
    gt = build_ground_truth(config)
    rng = np.random.default_rng(config.seed)
    noise = config.noise
    ns = config.noise_scale
    g_w = noise.gravity_w
    records = []

    # IMU stream with bias random walks.
    n_imu = int(math.floor(config.duration * config.imu_rate)) + 1
    bg = config.initial_gyro_bias.copy()
    ba = config.initial_accel_bias.copy()
    for k in range(n_imu):
        t = k / config.imu_rate
        if t > config.duration:
            break
        kin = gt.kinematics(t, g_w)
        gyro = (kin.omega_v + bg
                + ns * noise.sigma_gyro * rng.standard_normal(3))
        accel = (kin.a_v + ba
                 + ns * noise.sigma_accel * rng.standard_normal(3))
        records.append((t, 0, "", ImuMeasurement(t, gyro, accel)))
        bg = bg + ns * noise.sigma_bg * rng.standard_normal(3)
        ba = ba + ns * noise.sigma_ba * rng.standard_normal(3)

    # Radar streams, one per sensor, phase-offset scan ticks.
    for sensor in config.radars:
        sid = sensor.extrinsics.sensor_id
        k = 0
        while True:
            t = sensor.phase + k / sensor.rate
            k += 1
            if t > config.duration:
                break
            if t < 0.0:
                continue
            kin = gt.kinematics(t, g_w)
            v_s = sensor_velocity(kin, sensor.extrinsics)
            lo = min(sensor.min_targets, sensor.max_targets)
            n_t = int(rng.integers(lo, sensor.max_targets + 1))
            targets = []
            for _ in range(n_t):
                az = rng.uniform(-FOV_AZIMUTH, FOV_AZIMUTH)
                el = rng.uniform(-FOV_ELEVATION, FOV_ELEVATION)
                rr = rng.uniform(RANGE_MIN, RANGE_MAX)
                d = np.array([math.cos(az) * math.cos(el),
                              math.sin(az) * math.cos(el),
                              math.sin(el)])
                vr = -float(d @ v_s) + ns * noise.sigma_vr * rng.standard_normal()
                if config.outlier_fraction > 0.0 and \
                        rng.random() < config.outlier_fraction:
                    vr += rng.normal(config.outlier_velocity_bias,
                                     config.outlier_velocity_spread)
                az_rep = az + ns * config.azimuth_sigma * rng.standard_normal()
                el_rep = el + ns * config.elevation_sigma * rng.standard_normal()
                r_sigma = max(config.range_sigma_floor,
                              config.range_sigma_frac * rr)
                r_rep = max(rr + ns * r_sigma * rng.standard_normal(), 0.1)
                el_rep = float(np.clip(el_rep, -np.pi / 2 + 1e-9,
                                       np.pi / 2 - 1e-9))
                az_rep = float(np.clip(az_rep, -np.pi, np.pi))
                targets.append(RadarTarget(r_rep, vr, az_rep, el_rep))
            records.append((t, 1, sid, RadarScan(t, sid, targets)))

    records.sort(key=lambda r: (r[0], r[1], r[2]))
    log = SensorLog([s.extrinsics for s in config.radars], noise,
                    [r[3] for r in records])
    return gt, log
