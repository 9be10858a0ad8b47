"""Analytic derivatives of spline body kinematics with respect to the four
supporting control poses of a segment.

Control-pose perturbations are right-multiplied local twists:
T_m <- T_m @ exp(hat(delta)). The chain rule runs through the incremental
twists (via inverse left/right SE(3) Jacobians of the log), the scaled
exponentials of the cumulative basis (via the SE(3) right Jacobian), and the
first/second-order product rule of the spline, entirely at the 4x4 matrix
level. Evaluation is batched over the query times of one segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (Pose, compose, hat6, inverse, se3_exp_matrix_batch,
                       se3_left_jacobian_inv, se3_log,
                       se3_right_jacobian_batch, se3_right_jacobian_inv)
from .spline import BASIS_MATRIX

# Local parameter count: 4 control poses x 6 twist coordinates.
SEGMENT_PARAMS = 24


def hat6_batch(v: np.ndarray) -> np.ndarray:
    """Batched se(3) hat: (..., 6) -> (..., 4, 4)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    out[..., :3, 3] = v[..., 3:]
    return out


def _basis_rows(u: np.ndarray, delta_t: float):
    u = np.asarray(u, dtype=float)
    pows = np.stack([np.ones_like(u), u, u * u, u * u * u], axis=-1)
    dpows = np.stack([np.zeros_like(u), np.ones_like(u), 2 * u, 3 * u * u],
                     axis=-1)
    ddpows = np.stack([np.zeros_like(u), np.zeros_like(u),
                       np.full_like(u, 2.0), 6 * u], axis=-1)
    b = pows @ BASIS_MATRIX.T
    db = (dpows @ BASIS_MATRIX.T) / delta_t
    ddb = (ddpows @ BASIS_MATRIX.T) / delta_t**2
    return b, db, ddb


@dataclass
class SegmentKinematics:
    """Body kinematics at the query times of one spline segment, with optional
    Jacobians w.r.t. the 24 local control-pose parameters."""

    v_v: np.ndarray       # (n, 3)
    omega_v: np.ndarray   # (n, 3)
    a_v: np.ndarray       # (n, 3)
    pose: np.ndarray      # (n, 4, 4)
    j_v: np.ndarray | None = None      # (n, 24, 3)
    j_omega: np.ndarray | None = None  # (n, 24, 3)
    j_a: np.ndarray | None = None      # (n, 24, 3)


class _TangentMatrix:
    """A (n,4,4) matrix batch paired with its (n,m,4,4) directional tangents."""

    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = val
        self.tan = tan

    def __matmul__(self, other: "_TangentMatrix") -> "_TangentMatrix":
        val = self.val @ other.val
        n, m = self.tan.shape[0], self.tan.shape[1]
        if m == 0:
            return _TangentMatrix(val, self.tan)
        # Flatten the direction axis into the matmul so each product is one
        # large batched BLAS call instead of n*m tiny ones.
        left = (np.ascontiguousarray(self.tan).reshape(n, 4 * m, 4)
                @ other.val).reshape(n, m, 4, 4)
        right = (self.val @ other.tan.transpose(0, 2, 1, 3)
                 .reshape(n, 4, 4 * m)).reshape(n, 4, m, 4)
        return _TangentMatrix(val, left + right.transpose(0, 2, 1, 3))

    def scale(self, s: np.ndarray) -> "_TangentMatrix":
        s = np.asarray(s, dtype=float)
        return _TangentMatrix(self.val * s[:, None, None],
                              self.tan * s[:, None, None, None])

    def __add__(self, other: "_TangentMatrix") -> "_TangentMatrix":
        return _TangentMatrix(self.val + other.val, self.tan + other.tan)


def segment_kinematics(poses: list[Pose], u: np.ndarray, delta_t: float,
                       gravity_w: np.ndarray,
                       with_jacobians: bool = True) -> SegmentKinematics:
    """Evaluate v_v, omega_v, a_v at local coordinates u of the segment whose
    supporting control poses are `poses` (indices i-1, i, i+1, i+2)."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    gravity_w = np.asarray(gravity_w, dtype=float)
    b, db, ddb = _basis_rows(u, delta_t)

    twists = [se3_log(compose(inverse(poses[j]), poses[j + 1]))
              for j in range(3)]

    if with_jacobians:
        m = SEGMENT_PARAMS
        d_tw = np.zeros((3, m, 6))
        for j in range(3):
            jri = se3_right_jacobian_inv(twists[j])
            jli = se3_left_jacobian_inv(twists[j])
            # Perturbing the later pose of the pair, then the earlier one.
            d_tw[j, 6 * (j + 1):6 * (j + 2), :] = jri.T
            d_tw[j, 6 * j:6 * (j + 1), :] = -jli.T
    factors = []
    for j in range(3):
        s, ds, dds = b[:, j + 1], db[:, j + 1], ddb[:, j + 1]
        a_val = se3_exp_matrix_batch(s[:, None] * twists[j])
        om_hat = hat6(twists[j])
        if with_jacobians:
            jr = se3_right_jacobian_batch(s[:, None] * twists[j])
            xi_tan = np.einsum("kab,pb->kpa", jr, d_tw[j]) * s[:, None, None]
            a_tan = a_val[:, None] @ hat6_batch(xi_tan)
            om_tan = np.broadcast_to(hat6_batch(d_tw[j]), (n, m, 4, 4))
        else:
            a_tan = np.zeros((n, 0, 4, 4))
            om_tan = np.zeros((n, 0, 4, 4))
        a = _TangentMatrix(a_val, a_tan)
        om = _TangentMatrix(np.broadcast_to(om_hat, (n, 4, 4)), om_tan)
        a_om = a @ om
        da = a_om.scale(ds)
        dda = (da @ om).scale(ds) + a_om.scale(dds)
        factors.append((a, da, dda))

    t0_val = np.broadcast_to(poses[0].matrix(), (n, 4, 4))
    if with_jacobians:
        t0_tan = np.zeros((n, SEGMENT_PARAMS, 4, 4))
        for p in range(6):
            e = np.zeros(6)
            e[p] = 1.0
            t0_tan[:, p] = poses[0].matrix() @ hat6(e)
    else:
        t0_tan = np.zeros((n, 0, 4, 4))
    t0 = _TangentMatrix(t0_val, t0_tan)

    (a1, da1, dda1), (a2, da2, dda2), (a3, da3, dda3) = factors

    # Shared sub-products keep the tangent matmul count down.
    a12 = a1 @ a2
    a23 = a2 @ a3
    a1_da2 = a1 @ da2
    da1_a2 = da1 @ a2
    pose = t0 @ (a12 @ a3)
    d_pose = t0 @ (da1 @ a23 + a1_da2 @ a3 + a12 @ da3)
    mixed = (da1 @ da2) @ a3 + da1_a2 @ da3 + a1_da2 @ da3
    dd_pose = t0 @ (dda1 @ a23 + (a1 @ dda2) @ a3 + a12 @ dda3
                    + mixed.scale(np.full(n, 2.0)))

    r = pose.val[:, :3, :3]
    dr = d_pose.val[:, :3, :3]
    dt = d_pose.val[:, :3, 3]
    ddt = dd_pose.val[:, :3, 3]

    v_v = np.einsum("kji,kj->ki", r, dt)
    w_mat = np.einsum("kji,kjl->kil", r, dr)
    omega_v = _vee_batch(w_mat)
    a_v = np.einsum("kji,kj->ki", r, ddt + gravity_w)

    out = SegmentKinematics(v_v, omega_v, a_v, pose.val)
    if not with_jacobians:
        return out

    r_tan = pose.tan[:, :, :3, :3]
    dr_tan = d_pose.tan[:, :, :3, :3]
    dt_tan = d_pose.tan[:, :, :3, 3]
    ddt_tan = dd_pose.tan[:, :, :3, 3]

    out.j_v = (np.einsum("kpji,kj->kpi", r_tan, dt)
               + np.einsum("kji,kpj->kpi", r, dt_tan))
    w_tan = (np.einsum("kpji,kjl->kpil", r_tan, dr)
             + np.einsum("kji,kpjl->kpil", r, dr_tan))
    out.j_omega = _vee_batch(w_tan)
    out.j_a = (np.einsum("kpji,kj->kpi", r_tan, ddt + gravity_w)
               + np.einsum("kji,kpj->kpi", r, ddt_tan))
    return out


def _vee_batch(m: np.ndarray) -> np.ndarray:
    a = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)
