"""Rotation and rigid-transform algebra shared by every module.

Conventions
-----------
- Quaternions are numpy arrays ``[w, x, y, z]`` (Hamilton, right-handed),
  canonicalized to ``w >= 0``.
- ``quat_to_matrix(q)`` is the active body-to-navigation rotation. The
  navigation-to-body matrix is its transpose, see ``rot_nb``.
- Euler angles are Z-Y-X intrinsic: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
- A ``Pose`` maps points from its local frame into the parent frame:
  ``x_parent = R @ x_local + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GimbalLock

_SMALL_ANGLE = 1e-8
GIMBAL_GUARD = 1e-6

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a ⊙ b``, renormalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return quat_normalize(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_nb(q) -> np.ndarray:
    """Navigation-to-body rotation matrix for attitude quaternion ``q``."""
    return quat_to_matrix(q).T


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_normalize(np.concatenate([[math.cos(h)], math.sin(h) * axis]))


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    if angle < _SMALL_ANGLE:
        return quat_normalize(np.concatenate([[1.0], 0.5 * rv]))
    return quat_from_axis_angle(rv / angle, angle)


def so3_exp(rv) -> np.ndarray:
    """Rotation matrix ``Exp(rv)`` by Rodrigues' formula."""
    rv = np.asarray(rv, dtype=float)
    theta = float(np.linalg.norm(rv))
    K = skew(rv)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of ``so3_exp`` for angles below pi)."""
    q = quat_from_matrix(R)
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < _SMALL_ANGLE:
        return 2.0 * v / q[0]
    angle = 2.0 * math.atan2(s, q[0])
    return angle * v / s


def rotation_angle(R) -> float:
    """Geodesic angle of ``R`` from identity, radians."""
    c = 0.5 * (np.trace(R) - 1.0)
    # arccos loses precision near 0; use the skew part for small angles
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(math.atan2(s, c))


def rotation_distance(Ra, Rb) -> float:
    return rotation_angle(np.asarray(Ra).T @ np.asarray(Rb))


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (Frobenius-nearest rotation)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def euler_from_rotation(R) -> tuple[float, float, float]:
    """Return ``(roll, pitch, yaw)``; raises ``GimbalLock`` near pitch = ±pi/2."""
    R = np.asarray(R, dtype=float)
    pitch = math.atan2(-R[2, 0], math.hypot(R[2, 1], R[2, 2]))
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_GUARD:
        raise GimbalLock(f"pitch {pitch:.9f} rad is within {GIMBAL_GUARD} of ±pi/2")
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return wrap_angle(roll), pitch, wrap_angle(yaw)


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return quat_from_matrix(rotation_from_euler(roll, pitch, yaw))


def quat_slerp(a, b, w: float) -> np.ndarray:
    """Spherical interpolation; ``w = 0`` gives ``a``, ``w = 1`` gives ``b``."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b, d = -b, -d
    if d > 1.0 - 1e-12:
        return quat_normalize((1.0 - w) * a + w * b)
    theta = math.acos(min(d, 1.0))
    s = math.sin(theta)
    return quat_normalize((math.sin((1.0 - w) * theta) * a + math.sin(w * theta) * b) / s)


@dataclass(frozen=True)
class Pose:
    """Rigid transform (rotation quaternion + translation in meters)."""

    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> Pose:
        return cls(quat_from_matrix(R), np.asarray(t, dtype=float))

    @classmethod
    def from_homogeneous(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @classmethod
    def from_xyz_rpy(cls, x, y, z, roll=0.0, pitch=0.0, yaw=0.0) -> Pose:
        return cls(quat_from_euler(roll, pitch, yaw), np.array([x, y, z], dtype=float))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def homogeneous(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Transform a single point ``(3,)`` or an ``(N, 3)`` array."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def inverse(self) -> Pose:
        q_inv = quat_conjugate(self.rotation)
        return Pose(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(
            quat_multiply(self.rotation, other.rotation),
            self.R @ other.translation + self.translation,
        )

    __matmul__ = compose

    def euler(self) -> tuple[float, float, float]:
        return euler_from_rotation(self.R)

    def yaw(self) -> float:
        R = self.R
        return math.atan2(R[1, 0], R[0, 0])

    def as_array(self) -> np.ndarray:
        """``[tx, ty, tz, qw, qx, qy, qz]``."""
        return np.concatenate([self.translation, self.rotation])

    @classmethod
    def from_array(cls, a) -> Pose:
        a = np.asarray(a, dtype=float)
        return cls(a[3:7], a[:3])

    def __eq__(self, other):  # dataclass eq would compare arrays elementwise
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_inverse(p: Pose) -> Pose:
    return p.inverse()


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and rotation angle (rad) between two poses."""
    return (
        float(np.linalg.norm(a.translation - b.translation)),
        rotation_distance(a.R, b.R),
    )
