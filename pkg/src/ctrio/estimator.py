"""Sliding-window continuous-time trajectory estimator.

A cumulative cubic B-spline over SE(3) control poses is extended by one knot
every delta_t seconds (IMU integration for the newest knot, constant-velocity
extrapolation for the lookahead knot the spline support requires) and refined
by a robust damped Gauss-Newton solve over a fixed-duration window of radar
radial-velocity and raw IMU residuals. Also provides the per-scan least-squares
ego-velocity fit used as a standalone baseline and as a contamination gate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose, compose, inverse, orthonormalize, se3_exp,
                       se3_log, se3_right_jacobian_inv, so3_exp)
from .jacobians import segment_kinematics
from .logio import TrajectoryRecord
from .models import (ImuMeasurement, NoiseModel, RadarExtrinsics, RadarScan,
                     cauchy)
from .spline import ControlPose, Trajectory


class InitializationError(RuntimeError):
    """Initialization preconditions violated (e.g. motion while stationary)."""


class NumericalError(RuntimeError):
    """Non-finite residuals or Jacobians, or an unsolvable normal system."""


@dataclass
class SolverConfig:
    max_iterations: int = 20
    initial_damping: float = 1e-4
    # Relative cost decrease below which the solve is declared converged.
    # Near a noiseless optimum Gauss-Newton converges quadratically, so the
    # relative decrease stays O(1) until machine precision and this still
    # converges fully; on noisy data it stops the slow robust-reweighting
    # tail that costs iterations without improving the estimate.
    cost_tolerance: float = 1e-4
    step_tolerance: float = 1e-10
    max_damping: float = 1e12

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "cost_tolerance",
                     "step_tolerance", "max_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EstimatorConfig:
    noise: NoiseModel = field(default_factory=NoiseModel)
    extrinsics: list[RadarExtrinsics] = field(default_factory=list)
    solver: SolverConfig = field(default_factory=SolverConfig)
    delta_t: float = 0.2
    window: float = 0.6
    output_rate: float = 100.0
    init_duration: float = 0.5
    init_max_gyro: float = 0.2          # rad/s; more means "not stationary"
    anchor_sigma_rotation: float = 1e-5
    anchor_sigma_translation: float = 1e-5
    # Weak hold on the window's incoming bias states; without it the absolute
    # accelerometer bias trades off against quadratic position drift whenever
    # radar constraints are absent.
    bias_anchor_sigma_gyro: float = 1e-4
    bias_anchor_sigma_accel: float = 1e-3
    # Weak prior holding each window pose near its predicted value (IMU
    # integration / constant-velocity extrapolation). Far weaker than any
    # measurement, it only pins directions the measurements leave free
    # (e.g. constant-velocity drift when no radar scans are present).
    prediction_sigma_rotation: float = 0.1
    prediction_sigma_translation: float = 0.5
    gate_min_inlier_fraction: float = 0.2
    gate_weight: float = 0.1

    def __post_init__(self):
        if self.delta_t <= 0.0 or self.window <= 0.0:
            raise ValueError("delta_t and window must be positive")
        n = self.window / self.delta_t
        if abs(n - round(n)) > 1e-9:
            raise ValueError("window must be an integer multiple of delta_t")
        if round(n) < 3:
            raise ValueError("window must cover at least 3 knot intervals")

    @property
    def window_segments(self) -> int:
        return round(self.window / self.delta_t)


@dataclass
class EgoVelocityFit:
    """Robust least-squares fit of the sensor velocity from one radar scan."""

    v_s: np.ndarray
    inlier_mask: np.ndarray
    residual_rms: float
    valid: bool
    condition: float

    @property
    def inlier_fraction(self) -> float:
        if self.inlier_mask.size == 0:
            return 0.0
        return float(np.mean(self.inlier_mask))


def _invalid_fit(n: int) -> EgoVelocityFit:
    return EgoVelocityFit(np.zeros(3), np.zeros(n, dtype=bool), np.inf,
                          False, np.inf)


def ego_velocity_lsq(scan: RadarScan, noise: NoiseModel | None = None,
                     ransac_iterations: int = 40) -> EgoVelocityFit:
    """Recover the radar sensor's own velocity from one scan's radial
    velocities: v_r = -d . v_s for static targets, solved by RANSAC with
    3-target minimal solves plus an inlier refit. Deterministic per call."""
    n = len(scan.targets)
    if n < 3:
        return _invalid_fit(n)
    sigma = noise.sigma_vr if noise is not None else 0.1
    threshold = 3.0 * sigma
    a = -np.stack([t.direction() for t in scan.targets])
    b = np.array([t.radial_velocity for t in scan.targets])

    def mask_for(v):
        return np.abs(a @ v - b) < threshold

    candidates = []
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank == 3:
        candidates.append(sol)
    rng = np.random.default_rng(0)
    for _ in range(ransac_iterations):
        idx = rng.choice(n, size=3, replace=False)
        try:
            v = np.linalg.solve(a[idx], b[idx])
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(v)):
            candidates.append(v)
    best_mask, best_key = None, (-1, np.inf)
    for v in candidates:
        m = mask_for(v)
        count = int(np.sum(m))
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean((a[m] @ v - b[m]) ** 2)))
        if (count, -rms) > (best_key[0], -best_key[1]):
            best_key = (count, rms)
            best_mask = m
    if best_mask is None:
        return _invalid_fit(n)
    cond = float(np.linalg.cond(a[best_mask]))
    if not np.isfinite(cond) or cond > 1e6:
        fit = _invalid_fit(n)
        fit.condition = cond
        return fit
    v, *_ = np.linalg.lstsq(a[best_mask], b[best_mask], rcond=None)
    mask = mask_for(v)
    rms = float(np.sqrt(np.mean((a[mask] @ v - b[mask]) ** 2)))
    return EgoVelocityFit(v, mask, rms, True, cond)


def propagate_constant_velocity(t_i: Pose, t_i1: Pose) -> Pose:
    """Constant-velocity knot extrapolation: the next knot continues the
    relative motion between the last two."""
    return compose(t_i1, compose(inverse(t_i), t_i1))


def integrate_imu(pose: Pose, velocity: np.ndarray, batch, *,
                  gyro_bias=None, accel_bias=None, gravity_w=None,
                  t_start: float | None = None,
                  t_end: float | None = None) -> tuple[Pose, np.ndarray]:
    """First-order dead-reckoning over a time-ordered IMU batch.

    The state (pose, world-frame velocity) refers to t_start (defaults to the
    first sample's time); each sample's reading is held over the interval to
    the next sample, the last one until t_end if given.
    """
    bg = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, float)
    ba = np.zeros(3) if accel_bias is None else np.asarray(accel_bias, float)
    g_w = (np.array([0.0, 0.0, 9.80665]) if gravity_w is None
           else np.asarray(gravity_w, float))
    r = pose.rotation.copy()
    p = pose.translation.copy()
    v = np.asarray(velocity, float).copy()
    batch = list(batch)
    if not batch:
        return Pose(r, p), v
    times = [m.t for m in batch]
    t0 = times[0] if t_start is None else t_start
    for k, m in enumerate(batch):
        seg_start = max(times[k], t0) if k > 0 else t0
        seg_end = times[k + 1] if k + 1 < len(batch) else \
            (t_end if t_end is not None else times[k])
        dt = seg_end - seg_start
        if dt <= 0.0:
            continue
        a_w = r @ (m.accel - ba) - g_w
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt
        r = orthonormalize(r @ so3_exp((m.gyro - bg) * dt))
    return Pose(r, p), v


# ---------------------------------------------------------------------------
# Window cost


class WindowCost:
    """Stacked weighted residuals and analytic Jacobians for one sliding
    window of radar and IMU measurements over the active spline segments.

    Variables: one local se(3) increment per supporting control pose, plus
    gyro/accel bias states at the two window boundary knots (linearly
    interpolated at measurement times). Radar rows carry a Cauchy robust
    weight; `robust=False` exposes the plain weighted residuals used by the
    finite-difference audit.
    """

    def __init__(self, traj: Trajectory, first_seg: int, last_seg: int,
                 scans: list, imu: list, config: EstimatorConfig,
                 anchor_pose: Pose):
        if not scans and not imu:
            raise ValueError("empty window: no measurements")
        self.traj = traj
        self.config = config
        self.noise = config.noise
        self.first_seg = first_seg
        self.last_seg = last_seg
        self.pose_indices = list(range(first_seg - 1, last_seg + 3))
        self.n_pose = len(self.pose_indices)
        self.n_params = 6 * self.n_pose + 12
        self.anchor_pose = anchor_pose
        self.bias_lo_index = first_seg
        self.bias_hi_index = last_seg + 1

        dt = traj.delta_t
        t_lo = self.bias_lo_index * dt
        t_hi = self.bias_hi_index * dt
        lo = traj.control_pose(self.bias_lo_index)
        hi = traj.control_pose(self.bias_hi_index)
        self.bias = np.concatenate([lo.gyro_bias, lo.accel_bias,
                                    hi.gyro_bias, hi.accel_bias])
        self.bias_prior = self.bias[:6].copy()
        self.predicted_poses = [traj.control_pose(k).pose.copy()
                                for k in self.pose_indices]

        ext = {e.sensor_id: e for e in config.extrinsics}
        k_scans = len(scans)
        self.m_imu = len(imu)

        # Partition measurement evaluation points by spline segment; query
        # points are deduplicated so all targets of one scan (and coincident
        # IMU samples) share a single spline evaluation.
        self.segments = {}

        def seg_entry(s):
            if s not in self.segments:
                self.segments[s] = {"u": [], "umap": {},
                                    "imu_rows": [], "radar_rows": []}
            return self.segments[s]

        def u_index(e, u):
            k = e["umap"].get(u)
            if k is None:
                k = e["umap"][u] = len(e["u"])
                e["u"].append(u)
            return k

        def seg_of(t):
            return min(max(int(np.floor(t / dt)), first_seg), last_seg)

        self.imu_gyro = np.array([m.gyro for m in imu]).reshape(-1, 3)
        self.imu_accel = np.array([m.accel for m in imu]).reshape(-1, 3)
        self.imu_alpha = np.array(
            [(m.t - t_lo) / (t_hi - t_lo) for m in imu])
        for row, m in enumerate(imu):
            s = seg_of(m.t)
            e = seg_entry(s)
            e["imu_rows"].append((u_index(e, m.t / dt - s), row))

        rows_w, rows_g, rows_vr, rows_scale = [], [], [], []
        for scan, gate in scans:
            if scan.sensor_id not in ext:
                raise ValueError(f"unknown sensor_id {scan.sensor_id!r}")
            e_x = ext[scan.sensor_id]
            r_vs, t_vs = e_x.pose.rotation, e_x.pose.translation
            s = seg_of(scan.t)
            e = seg_entry(s)
            n_k = len(scan.targets)
            scale = gate / np.sqrt(k_scans * n_k)
            local = u_index(e, scan.t / dt - s)
            dirs = np.stack([t.direction() for t in scan.targets])
            wv = dirs @ r_vs.T
            base = sum(len(w) for w in rows_w)
            e["radar_rows"].extend((local, base + j) for j in range(n_k))
            rows_w.append(wv)
            rows_g.append(np.cross(t_vs, wv))
            rows_vr.append([t.radial_velocity for t in scan.targets])
            rows_scale.append(np.full(n_k, scale))
        self.radar_w = (np.concatenate(rows_w) if rows_w
                        else np.zeros((0, 3)))
        self.radar_g = (np.concatenate(rows_g) if rows_g
                        else np.zeros((0, 3)))
        self.radar_vr = (np.concatenate(rows_vr) if rows_vr
                         else np.zeros(0))
        self.radar_scale = (np.concatenate(rows_scale) if rows_scale
                            else np.zeros(0))
        self.n_radar = len(self.radar_vr)

        for s, e in self.segments.items():
            e["u"] = np.array(e["u"])
            e["imu_locals"] = np.array([x[0] for x in e["imu_rows"]], int)
            e["imu_idx"] = np.array([x[1] for x in e["imu_rows"]], int)
            e["radar_locals"] = np.array([x[0] for x in e["radar_rows"]], int)
            e["radar_idx"] = np.array([x[1] for x in e["radar_rows"]], int)
            e["cols"] = np.concatenate(
                [6 * (s - first_seg + j) + np.arange(6) for j in range(4)])

    # -- state management ---------------------------------------------------

    def save_state(self):
        return ([self.traj.control_pose(k).pose.copy()
                 for k in self.pose_indices], self.bias.copy())

    def restore_state(self, state):
        poses, bias = state
        for k, p in zip(self.pose_indices, poses):
            self.traj.set_pose(k, p.copy())
        self.bias = bias.copy()

    def apply_step(self, delta: np.ndarray):
        for m, k in enumerate(self.pose_indices):
            cp = self.traj.control_pose(k)
            cp.pose = compose(cp.pose, se3_exp(delta[6 * m:6 * m + 6]))
        self.bias = self.bias + delta[6 * self.n_pose:]

    def write_back_biases(self):
        """Store boundary bias states on their knots and interpolate the
        knots in between."""
        lo, hi = self.bias_lo_index, self.bias_hi_index
        for k in range(lo, hi + 1):
            a = (k - lo) / (hi - lo)
            cp = self.traj.control_pose(k)
            cp.gyro_bias = (1 - a) * self.bias[0:3] + a * self.bias[6:9]
            cp.accel_bias = (1 - a) * self.bias[3:6] + a * self.bias[9:12]

    # -- residual assembly --------------------------------------------------

    def _assemble(self, with_jacobians: bool, robust: bool):
        cfg, noise = self.config, self.noise
        dt = self.traj.delta_t
        n_p = self.n_params
        g_w = noise.gravity_w

        e_gyro = np.zeros((self.m_imu, 3))
        e_accel = np.zeros((self.m_imu, 3))
        r_radar = np.zeros(self.n_radar)
        if with_jacobians:
            j_gyro = np.zeros((self.m_imu, 3, n_p))
            j_accel = np.zeros((self.m_imu, 3, n_p))
            j_radar = np.zeros((self.n_radar, n_p))

        for s, e in self.segments.items():
            poses = [self.traj.control_pose(k).pose
                     for k in (s - 1, s, s + 1, s + 2)]
            sk = segment_kinematics(poses, e["u"], dt, g_w,
                                    with_jacobians=with_jacobians)
            if e["imu_idx"].size:
                locs, rows = e["imu_locals"], e["imu_idx"]
                alpha = self.imu_alpha[rows][:, None]
                b_g = (1 - alpha) * self.bias[0:3] + alpha * self.bias[6:9]
                b_a = (1 - alpha) * self.bias[3:6] + alpha * self.bias[9:12]
                e_gyro[rows] = self.imu_gyro[rows] - sk.omega_v[locs] - b_g
                e_accel[rows] = self.imu_accel[rows] - sk.a_v[locs] - b_a
                if with_jacobians:
                    axes = np.arange(3)
                    ix = np.ix_(rows, axes, e["cols"])
                    j_gyro[ix] = -sk.j_omega[locs].transpose(0, 2, 1)
                    j_accel[ix] = -sk.j_a[locs].transpose(0, 2, 1)
                    nb = 6 * self.n_pose
                    for i in range(3):
                        j_gyro[rows, i, nb + i] = -(1 - alpha[:, 0])
                        j_gyro[rows, i, nb + 6 + i] = -alpha[:, 0]
                        j_accel[rows, i, nb + 3 + i] = -(1 - alpha[:, 0])
                        j_accel[rows, i, nb + 9 + i] = -alpha[:, 0]
            if e["radar_idx"].size:
                locals_, rows = e["radar_locals"], e["radar_idx"]
                wv = self.radar_w[rows]
                gv = self.radar_g[rows]
                pred = -(np.sum(wv * sk.v_v[locals_], axis=1)
                         + np.sum(gv * sk.omega_v[locals_], axis=1))
                r_radar[rows] = self.radar_vr[rows] - pred
                if with_jacobians:
                    block = (np.einsum("kpi,ki->kp", sk.j_v[locals_], wv)
                             + np.einsum("kpi,ki->kp", sk.j_omega[locals_],
                                         gv))
                    j_radar[np.ix_(rows, e["cols"])] = block

        # Row weights.
        w_g = 1.0 / (np.sqrt(max(self.m_imu, 1)) * noise.sigma_gyro)
        w_a = 1.0 / (np.sqrt(max(self.m_imu, 1)) * noise.sigma_accel)
        res_blocks, jac_blocks, names = [], [], []
        cost = 0.0

        if self.n_radar:
            z = r_radar / noise.sigma_vr
            s_row = self.radar_scale
            if robust:
                c2 = noise.cauchy_scale ** 2
                w_c = 1.0 / (1.0 + z * z / c2)
                cost += float(np.sum(s_row ** 2 * c2 * np.log1p(z * z / c2)))
                row_w = s_row * np.sqrt(w_c) / noise.sigma_vr
            else:
                cost += float(np.sum((s_row * z) ** 2))
                row_w = s_row / noise.sigma_vr
            res_blocks.append(row_w * r_radar)
            names.append("radar")
            if with_jacobians:
                jac_blocks.append(row_w[:, None] * j_radar)

        if self.m_imu:
            res_blocks.append(w_g * e_gyro.reshape(-1))
            names.append("gyro")
            res_blocks.append(w_a * e_accel.reshape(-1))
            names.append("accel")
            cost += float(np.sum((w_g * e_gyro) ** 2))
            cost += float(np.sum((w_a * e_accel) ** 2))
            if with_jacobians:
                jac_blocks.append(w_g * j_gyro.reshape(-1, n_p))
                jac_blocks.append(w_a * j_accel.reshape(-1, n_p))

        # Bias random walk between the boundary states.
        nb = 6 * self.n_pose
        e_bias = np.concatenate([
            (self.bias[0:3] - self.bias[6:9]) / noise.sigma_bg,
            (self.bias[3:6] - self.bias[9:12]) / noise.sigma_ba])
        res_blocks.append(e_bias)
        names.append("bias")
        cost += float(np.sum(e_bias ** 2))
        if with_jacobians:
            jb = np.zeros((6, n_p))
            for i in range(3):
                jb[i, nb + i] = 1.0 / noise.sigma_bg
                jb[i, nb + 6 + i] = -1.0 / noise.sigma_bg
                jb[3 + i, nb + 3 + i] = 1.0 / noise.sigma_ba
                jb[3 + i, nb + 9 + i] = -1.0 / noise.sigma_ba
            jac_blocks.append(jb)

        # Weak hold on the incoming boundary bias states.
        w_bp = np.concatenate([
            np.full(3, 1.0 / self.config.bias_anchor_sigma_gyro),
            np.full(3, 1.0 / self.config.bias_anchor_sigma_accel)])
        e_bp = w_bp * (self.bias[:6] - self.bias_prior)
        res_blocks.append(e_bp)
        names.append("bias_prior")
        cost += float(np.sum(e_bp ** 2))
        if with_jacobians:
            jbp = np.zeros((6, n_p))
            jbp[:, nb:nb + 6] = np.diag(w_bp)
            jac_blocks.append(jbp)

        # Prediction prior. With radar in the window only the two newest
        # poses need it (they extend past the data); holding interior poses
        # too would freeze in whatever bias the prediction carried, which
        # shows up as velocity lag whenever the vehicle accelerates. Without
        # radar every pose is held, since IMU data alone leaves a
        # constant-velocity direction completely free.
        if len(self.radar_vr):
            pred_sel = [self.n_pose - 2, self.n_pose - 1]
            # Radar already observes velocity; the prior only regularizes the
            # extrapolated poses and must stay well below the radar weight or
            # it drags the estimate behind during accelerations.
            relax = 10.0
        else:
            pred_sel = list(range(self.n_pose))
            relax = 1.0
        w_pred = np.concatenate([
            np.full(3, 1.0 / (relax * self.config.prediction_sigma_rotation)),
            np.full(3, 1.0 / (relax
                              * self.config.prediction_sigma_translation))])
        pred_res = np.zeros(6 * len(pred_sel))
        pred_jac = np.zeros((6 * len(pred_sel), n_p)) \
            if with_jacobians else None
        for row, m in enumerate(pred_sel):
            k = self.pose_indices[m]
            pred = self.predicted_poses[m]
            e6 = se3_log(compose(inverse(pred),
                                 self.traj.control_pose(k).pose))
            pred_res[6 * row:6 * row + 6] = w_pred * e6
            if with_jacobians:
                pred_jac[6 * row:6 * row + 6, 6 * m:6 * m + 6] = \
                    w_pred[:, None] * se3_right_jacobian_inv(e6)
        res_blocks.append(pred_res)
        names.append("prediction")
        cost += float(np.sum(pred_res ** 2))
        if with_jacobians:
            jac_blocks.append(pred_jac)

        # Gauge anchor on the oldest supporting pose.
        cur = self.traj.control_pose(self.pose_indices[0]).pose
        e_anchor = se3_log(compose(inverse(self.anchor_pose), cur))
        w_anchor = np.concatenate([
            np.full(3, 1.0 / self.config.anchor_sigma_rotation),
            np.full(3, 1.0 / self.config.anchor_sigma_translation)])
        res_blocks.append(w_anchor * e_anchor)
        names.append("anchor")
        cost += float(np.sum((w_anchor * e_anchor) ** 2))
        if with_jacobians:
            ja = np.zeros((6, n_p))
            ja[:, 0:6] = w_anchor[:, None] * se3_right_jacobian_inv(e_anchor)
            jac_blocks.append(ja)

        for name, blk in zip(names, res_blocks):
            if not np.all(np.isfinite(blk)):
                raise NumericalError(f"non-finite residuals in block {name!r}")
        r = np.concatenate(res_blocks)
        if not with_jacobians:
            return r, None, cost
        j = np.vstack(jac_blocks)
        if not np.all(np.isfinite(j)):
            raise NumericalError("non-finite Jacobian")
        return r, j, cost

    def linearize(self, robust: bool = True):
        return self._assemble(True, robust)

    def evaluate(self, robust: bool = True) -> float:
        return self._assemble(False, robust)[2]


def build_cost(state: "WindowState", config: EstimatorConfig) -> WindowCost:
    """Residual system over the window's active segments at the current
    state."""
    i = state.segment
    first = max(state.first_segment, i - (config.window_segments - 1))
    anchor = state.trajectory.control_pose(first - 1).pose.copy()
    return WindowCost(state.trajectory, first, i, state.scans, state.imu,
                      config, anchor)


# ---------------------------------------------------------------------------
# Damped Gauss-Newton solver


@dataclass
class SolveReport:
    iterations: int
    accepted_costs: list[float]
    converged: bool
    reason: str

    @property
    def initial_cost(self) -> float:
        return self.accepted_costs[0]

    @property
    def final_cost(self) -> float:
        return self.accepted_costs[-1]


def solve(problem, config: SolverConfig) -> SolveReport:
    """Levenberg-Marquardt over any problem exposing linearize() ->
    (residuals, jacobian, cost), evaluate() -> cost, apply_step(delta),
    save_state() and restore_state(). Accepted steps strictly decrease the
    cost; damping multiplies by 10 on rejection, 0.1 on acceptance."""
    r, j, cost = problem.linearize()
    costs = [cost]
    lam = config.initial_damping
    reason = "max_iterations"
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        g = j.T @ r
        if np.max(np.abs(g)) < 1e-14 * max(1.0, cost):
            converged, reason = True, "gradient_tolerance"
            break
        iterations += 1
        h = j.T @ j
        d = np.clip(np.diag(h), 1e-12, None)
        try:
            step = np.linalg.solve(h + lam * np.diag(d), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            if lam > config.max_damping:
                reason = "damping_exhausted"
                break
            continue
        saved = problem.save_state()
        problem.apply_step(step)
        try:
            new_cost = problem.evaluate()
        except NumericalError:
            new_cost = np.inf
        if np.isfinite(new_cost) and new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            costs.append(cost)
            lam = max(lam * 0.1, 1e-15)
            if rel < config.cost_tolerance:
                converged, reason = True, "cost_tolerance"
                break
            if np.linalg.norm(step) < config.step_tolerance:
                converged, reason = True, "step_tolerance"
                break
            r, j, cost = problem.linearize()
            costs[-1] = cost
        else:
            problem.restore_state(saved)
            lam *= 10.0
            if lam > config.max_damping:
                reason = "damping_exhausted"
                break
    return SolveReport(iterations, costs, converged, reason)


# ---------------------------------------------------------------------------
# Sliding-window estimator


@dataclass
class WindowState:
    """Active spline segments, buffered measurements and bookkeeping for the
    sliding-window estimator. Times inside are relative to t_origin."""

    trajectory: Trajectory
    segment: int
    first_segment: int
    t_origin: float
    imu: list = field(default_factory=list)
    scans: list = field(default_factory=list)   # (RadarScan, gate weight)


class SlidingWindowEstimator:
    """Streams measurements in, emits finalized trajectory records out.

    Every delta_t of data completes one spline segment: the newest knot is
    refreshed by IMU integration, the lookahead knot by constant-velocity
    extrapolation, the window is re-solved, and the oldest segment leaving
    the window is sampled into output records.
    """

    def __init__(self, config: EstimatorConfig):
        self.config = config
        self.state: WindowState | None = None
        self._init_imu: list[ImuMeasurement] = []
        self._out_n = 0
        self._next_emit = 0
        self.stats = {"windows": 0, "solve_times": [], "iterations": [],
                      "dropped_records": 0}

    # -- lifecycle ----------------------------------------------------------

    def initialize(self, batch: list[ImuMeasurement]) -> WindowState:
        """Anchor the world frame from a stationary IMU batch: roll/pitch from
        the mean specific-force direction, yaw zero, biases from the means."""
        cfg = self.config
        if not batch or batch[-1].t - batch[0].t < cfg.init_duration - 1e-9:
            raise InitializationError(
                f"need at least {cfg.init_duration} s of IMU data")
        gyro = np.array([m.gyro for m in batch])
        accel = np.array([m.accel for m in batch])
        max_rate = float(np.max(np.linalg.norm(gyro, axis=1)))
        if max_rate > cfg.init_max_gyro:
            raise InitializationError(
                f"motion during initialization: gyro norm {max_rate:.3f} "
                f"rad/s exceeds {cfg.init_max_gyro}")
        a_mean = accel.mean(axis=0)
        u = a_mean / np.linalg.norm(a_mean)
        # Minimal rotation taking the measured gravity direction to +z.
        axis = np.cross(u, [0.0, 0.0, 1.0])
        s = np.linalg.norm(axis)
        ang = np.arctan2(s, u[2])
        r0 = so3_exp(axis / s * ang) if s > 1e-12 else np.eye(3)
        pose0 = Pose(r0, np.zeros(3))  # vehicle-to-world: maps u to +z
        b_g = gyro.mean(axis=0)
        g_v = pose0.rotation.T @ cfg.noise.gravity_w
        b_a = a_mean - g_v

        traj = Trajectory(cfg.delta_t)
        for k in range(-1, 3):
            traj.insert_control_pose(ControlPose(
                k, k * cfg.delta_t, pose0.copy(), b_g.copy(), b_a.copy()))
        self.state = WindowState(traj, segment=0, first_segment=0,
                                 t_origin=batch[-1].t)
        return self.state

    def add(self, record) -> list[TrajectoryRecord]:
        """Feed one time-ordered measurement; returns any newly finalized
        trajectory records."""
        if self.state is None:
            if isinstance(record, ImuMeasurement):
                self._init_imu.append(record)
                if (self._init_imu[-1].t - self._init_imu[0].t
                        >= self.config.init_duration):
                    self.initialize(self._init_imu)
            return []
        st = self.state
        tau = record.t - st.t_origin
        dt = self.config.delta_t
        window_start = max(st.first_segment,
                           st.segment - (self.config.window_segments - 1)) * dt
        if tau < window_start:
            self.stats["dropped_records"] += 1
            return []
        out = []
        while tau >= (st.segment + 1) * dt:
            out.extend(self._complete_segment())
        if isinstance(record, ImuMeasurement):
            st.imu.append(ImuMeasurement(tau, record.gyro, record.accel))
        elif isinstance(record, RadarScan):
            fit = ego_velocity_lsq(record, self.config.noise)
            gate = 1.0
            targets = record.targets
            if fit.valid:
                if fit.inlier_fraction < self.config.gate_min_inlier_fraction:
                    gate = self.config.gate_weight
                else:
                    # Strip the targets the per-scan RANSAC fit flagged as
                    # outliers; the robust loss then only has to absorb
                    # whatever contamination slipped past the fit.
                    targets = [t for t, keep in zip(targets, fit.inlier_mask)
                               if keep]
            if targets:
                st.scans.append((RadarScan(tau, record.sensor_id, targets),
                                 gate))
        return out

    def process(self, records) -> list[TrajectoryRecord]:
        """Run over a full time-ordered record stream and finish."""
        out = []
        for rec in records:
            out.extend(self.add(rec))
        out.extend(self.finish())
        return out

    def finish(self) -> list[TrajectoryRecord]:
        """Emit the remaining optimized segments (last completed window)."""
        if self.state is None:
            return []
        out = []
        for s in range(self._next_emit, self.state.segment):
            out.extend(self._emit_segment(s))
        self._next_emit = self.state.segment
        return out

    # -- internals ----------------------------------------------------------

    def _complete_segment(self) -> list[TrajectoryRecord]:
        st = self.state
        cfg = self.config
        dt = cfg.delta_t
        i = st.segment
        t_i = i * dt

        # Refresh the newest knot from IMU dead reckoning started at the
        # current spline state, then re-extrapolate the lookahead knot.
        pwd = st.trajectory.evaluate_derivatives(t_i)
        batch = [m for m in st.imu if t_i <= m.t]
        cp_i = st.trajectory.control_pose(i)
        pose_next, _ = integrate_imu(
            pwd.pose, pwd.d_pose[:3, 3], batch,
            gyro_bias=cp_i.gyro_bias, accel_bias=cp_i.accel_bias,
            gravity_w=cfg.noise.gravity_w, t_start=t_i, t_end=t_i + dt)
        if batch:
            st.trajectory.set_pose(i + 1, pose_next)
        st.trajectory.set_pose(i + 2, propagate_constant_velocity(
            st.trajectory.control_pose(i).pose,
            st.trajectory.control_pose(i + 1).pose))

        cost = build_cost(st, cfg)
        t0 = time.perf_counter()
        report = solve(cost, cfg.solver)
        self.stats["solve_times"].append(time.perf_counter() - t0)
        self.stats["iterations"].append(report.iterations)
        self.stats["windows"] += 1
        cost.write_back_biases()

        out = []
        final = cost.first_seg - 1   # exits the window at the next step
        while self._next_emit <= final:
            out.extend(self._emit_segment(self._next_emit))
            self._next_emit += 1

        # Slide: append the next lookahead knot, prune old measurements.
        cp2 = st.trajectory.control_pose(i + 2)
        st.trajectory.insert_control_pose(ControlPose(
            i + 3, (i + 3) * dt,
            propagate_constant_velocity(
                st.trajectory.control_pose(i + 1).pose, cp2.pose),
            cp2.gyro_bias.copy(), cp2.accel_bias.copy()))
        st.segment = i + 1
        keep_from = max(st.first_segment,
                        st.segment - (cfg.window_segments - 1)) * dt
        st.imu = [m for m in st.imu if m.t >= keep_from]
        st.scans = [sg for sg in st.scans if sg[0].t >= keep_from]
        return out

    def _emit_segment(self, s: int) -> list[TrajectoryRecord]:
        st = self.state
        cfg = self.config
        dt = cfg.delta_t
        out = []
        while self._out_n / cfg.output_rate < (s + 1) * dt - 1e-12:
            tau = self._out_n / cfg.output_rate
            self._out_n += 1
            pwd = st.trajectory.evaluate_derivatives(tau)
            v_v = pwd.pose.rotation.T @ pwd.d_pose[:3, 3]
            out.append(TrajectoryRecord(tau + st.t_origin, pwd.pose, v_v))
        return out

    @property
    def window_variable_count(self) -> int:
        """Local parameters per full window: pose increments plus the two
        boundary bias pairs. Independent of the sensor count."""
        return 6 * (self.config.window_segments + 3) + 12

    def summary_stats(self) -> dict:
        times = self.stats["solve_times"]
        its = self.stats["iterations"]
        return {
            "windows": self.stats["windows"],
            "mean_solve_time_s": float(np.mean(times)) if times else 0.0,
            "max_solve_time_s": float(np.max(times)) if times else 0.0,
            "mean_iterations": float(np.mean(its)) if its else 0.0,
            "dropped_records": self.stats["dropped_records"],
        }
