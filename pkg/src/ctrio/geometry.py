"""SO(3)/SE(3) primitives: hat/vee operators, exponential and logarithm maps,
pose composition, quaternion conversion, and Jacobians of the exponential map.

Twists are 6-vectors ordered [omega, rho]: rotational coordinates (rad) first,
translational coordinates (m) second. Quaternions are Hamilton convention,
stored scalar-last: [qx, qy, qz, qw].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle, closed forms are replaced by series expansions.
SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """3-vector -> antisymmetric matrix, skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of skew. The input is antisymmetrized first, so vee is total."""
    m = np.asarray(m, dtype=float)
    a = 0.5 * (m - m.T)
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula; series branch below SMALL_ANGLE."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    if theta < SMALL_ANGLE:
        # Second-order series; exact to double precision at this scale.
        return np.eye(3) + w + 0.5 * (w @ w)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * w + b * (w @ w)


def quat_from_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion [qx, qy, qz, qw], Shepperd's method."""
    r = np.asarray(r, dtype=float)
    t = np.trace(r)
    if t > r[0, 0] and t > r[1, 1] and t > r[2, 2]:
        s = np.sqrt(1.0 + t) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s,
                      0.25 * s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[2, 1] - r[1, 2]) / s])
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s,
                      (r[0, 2] - r[2, 0]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s,
                      (r[1, 0] - r[0, 1]) / s])
    return q / np.linalg.norm(q)


def rotation_from_quat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion [qx, qy, qz, qw] -> rotation matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector with norm <= pi.

    Computed through the quaternion, which is stable for all angles including
    near pi. At exactly pi the axis sign is chosen so that the first nonzero
    axis component is positive (deterministic tie-break; q and -q are the same
    rotation).
    """
    q = quat_from_rotation(r)
    if q[3] < 0.0:
        q = -q
    nv = float(np.linalg.norm(q[:3]))
    if nv < 1e-12:
        return 2.0 * q[:3]
    if q[3] < 1e-12:
        # Angle is pi to machine precision: canonicalize the axis sign.
        axis = q[:3] / nv
        for c in axis:
            if abs(c) > 1e-12:
                if c < 0.0:
                    axis = -axis
                break
        return np.pi * axis
    theta = 2.0 * np.arctan2(nv, q[3])
    return (theta / nv) * q[:3]


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    """Left Jacobian of the SO(3) exponential (also the SE(3) V matrix)."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * w + (w @ w) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * w + b * (w @ w)


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(omega, dtype=float))


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * w + (w @ w) / 12.0
    c = (1.0 / theta**2
         - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta)))
    return np.eye(3) - 0.5 * w + c * (w @ w)


def so3_right_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(omega, dtype=float))


@dataclass
class Pose:
    """Rigid transform on SE(3): 3x3 rotation matrix plus translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    def matrix(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.rotation
        t[:3, 3] = self.translation
        return t

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(t: np.ndarray) -> "Pose":
        t = np.asarray(t, dtype=float)
        return Pose(t[:3, :3].copy(), t[:3, 3].copy())

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """One Newton step toward the nearest orthogonal matrix; cheap enough to
    run on every composition so drift stays below 1e-12."""
    return r @ (1.5 * np.eye(3) - 0.5 * (r.T @ r))


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(orthonormalize(a.rotation @ b.rotation),
                a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    # Copy before multiplying: matmul on a transposed view can round
    # differently from the contiguous copy, and downstream pose cancellations
    # rely on both using the stored rotation bit-for-bit.
    rt = np.ascontiguousarray(p.rotation.T)
    return Pose(rt, -(rt @ p.translation))


def hat6(xi: np.ndarray) -> np.ndarray:
    """se(3) hat: twist [omega, rho] -> 4x4 matrix."""
    xi = np.asarray(xi, dtype=float)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[:3])
    m[:3, 3] = xi[3:]
    return m


def se3_exp(xi: np.ndarray) -> Pose:
    """SE(3) exponential of a twist [omega, rho]."""
    xi = np.asarray(xi, dtype=float)
    omega, rho = xi[:3], xi[3:]
    return Pose(so3_exp(omega), so3_left_jacobian(omega) @ rho)


def se3_exp_matrix(xi: np.ndarray) -> np.ndarray:
    return se3_exp(xi).matrix()


def se3_log(p: Pose) -> np.ndarray:
    """SE(3) logarithm. Raises if the rotation angle reaches pi: such a pose
    cannot be a physical odometry increment and the axis sign would be
    ambiguous."""
    omega = so3_log(p.rotation)
    theta = float(np.linalg.norm(omega))
    if theta >= np.pi - 1e-9:
        raise ValueError(
            f"se3_log undefined at rotation angle {theta:.9f} ~ pi; "
            "invalid odometry increment")
    rho = so3_left_jacobian_inv(omega) @ p.translation
    return np.concatenate([omega, rho])


def _se3_q_left(omega: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Translation/rotation coupling block of the SE(3) left Jacobian."""
    wx = skew(omega)
    px = skew(rho)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-4:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0
        m2 = -1.0 / 24.0 + t2 / 720.0         # (1 - t^2/2 - cos t)/t^4
        m3 = -1.0 / 120.0 + t2 / 5040.0       # (t - sin t - t^3/6)/t^5
    else:
        c1 = (theta - np.sin(theta)) / theta**3
        m2 = (1.0 - 0.5 * theta**2 - np.cos(theta)) / theta**4
        m3 = (theta - np.sin(theta) - theta**3 / 6.0) / theta**5
    c2 = -m2
    c3 = -0.5 * (m2 - 3.0 * m3)
    q = (0.5 * px
         + c1 * (wx @ px + px @ wx + wx @ px @ wx)
         + c2 * (wx @ wx @ px + px @ wx @ wx - 3.0 * wx @ px @ wx)
         + c3 * (wx @ px @ wx @ wx + wx @ wx @ px @ wx))
    return q


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """6x6 left Jacobian of the SE(3) exponential, [omega, rho] ordering."""
    xi = np.asarray(xi, dtype=float)
    j = so3_left_jacobian(xi[:3])
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[3:, :3] = _se3_q_left(xi[:3], xi[3:])
    return out


def se3_right_jacobian(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = -np.asarray(xi, dtype=float)
    jinv = so3_left_jacobian_inv(xi[:3])
    q = _se3_q_left(xi[:3], xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[3:, 3:] = jinv
    out[3:, :3] = -jinv @ q @ jinv
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_right_jacobian_inv(-np.asarray(xi, dtype=float))


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Batched skew: (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rot_coeffs(theta: np.ndarray):
    """Rodrigues/V-matrix coefficients with series branches: returns
    (sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3) elementwise."""
    t2 = theta * theta
    safe = np.where(theta < SMALL_ANGLE, 1.0, theta)
    a = np.where(theta < SMALL_ANGLE, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(theta < SMALL_ANGLE, 0.5 - t2 / 24.0,
                 (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(theta < SMALL_ANGLE, 1.0 / 6.0 - t2 / 120.0,
                 (safe - np.sin(safe)) / safe**3)
    return a, b, c


def se3_exp_matrix_batch(xi: np.ndarray) -> np.ndarray:
    """Batched SE(3) exponential: (n, 6) twists -> (n, 4, 4) matrices."""
    xi = np.asarray(xi, dtype=float)
    omega, rho = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(omega, axis=-1)
    a, b, c = _rot_coeffs(theta)
    w = skew_batch(omega)
    w2 = w @ w
    eye = np.broadcast_to(np.eye(3), w.shape)
    r = eye + a[..., None, None] * w + b[..., None, None] * w2
    v = eye + b[..., None, None] * w + c[..., None, None] * w2
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = r
    out[..., :3, 3] = np.einsum("...ij,...j->...i", v, rho)
    out[..., 3, 3] = 1.0
    return out


def _se3_q_left_batch(omega: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Batched version of the Q coupling block of the SE(3) left Jacobian."""
    wx = skew_batch(omega)
    px = skew_batch(rho)
    theta = np.linalg.norm(omega, axis=-1)
    t2 = theta * theta
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    c1 = np.where(small, 1.0 / 6.0 - t2 / 120.0,
                  (safe - np.sin(safe)) / safe**3)
    m2 = np.where(small, -1.0 / 24.0 + t2 / 720.0,
                  (1.0 - 0.5 * safe**2 - np.cos(safe)) / safe**4)
    m3 = np.where(small, -1.0 / 120.0 + t2 / 5040.0,
                  (safe - np.sin(safe) - safe**3 / 6.0) / safe**5)
    c2 = -m2
    c3 = -0.5 * (m2 - 3.0 * m3)
    wp, pw = wx @ px, px @ wx
    wpw = wp @ wx
    ww = wx @ wx
    return (0.5 * px
            + c1[..., None, None] * (wp + pw + wpw)
            + c2[..., None, None] * (ww @ px + px @ ww - 3.0 * wpw)
            + c3[..., None, None] * (wpw @ wx + wx @ wpw))


def se3_right_jacobian_batch(xi: np.ndarray) -> np.ndarray:
    """Batched 6x6 right Jacobian of the SE(3) exponential: (n, 6) -> (n, 6, 6)."""
    xi = -np.asarray(xi, dtype=float)
    omega = xi[..., :3]
    theta = np.linalg.norm(omega, axis=-1)
    _, b, c = _rot_coeffs(theta)
    w = skew_batch(omega)
    j = (np.broadcast_to(np.eye(3), w.shape) + b[..., None, None] * w
         + c[..., None, None] * (w @ w))
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = j
    out[..., 3:, 3:] = j
    out[..., 3:, :3] = _se3_q_left_batch(omega, xi[..., 3:])
    return out


def rpy_from_rotation(r: np.ndarray) -> np.ndarray:
    """ZYX Euler angles [roll, pitch, yaw] with R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r = np.asarray(r, dtype=float)
    pitch = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    roll = np.arctan2(r[2, 1], r[2, 2])
    yaw = np.arctan2(r[1, 0], r[0, 0])
    return np.array([roll, pitch, yaw])


def rotation_from_rpy(rpy: np.ndarray) -> np.ndarray:
    roll, pitch, yaw = rpy
    return (so3_exp([0.0, 0.0, yaw])
            @ so3_exp([0.0, pitch, 0.0])
            @ so3_exp([roll, 0.0, 0.0]))
