"""SE(3) pose algebra: composition, inversion, exp/log maps, pose errors.

Rotations are unit quaternions (w, x, y, z) canonicalized to w >= 0 so that
equal rotations compare equal despite the quaternion double cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle the small-angle series is used in exp/log.
_SMALL_ANGLE = 1e-4


class NearSingularRotationError(ValueError):
    """Raised when log_map is evaluated too close to a pi rotation."""


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion rotation + translation in meters."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = _normalize_quat(self.quat)
        t = np.array(self.trans, dtype=np.float64).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(_quat_from_matrix(m[:3, :3]), m[:3, 3])

    @staticmethod
    def from_rotation(r: np.ndarray, trans=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(_quat_from_matrix(np.asarray(r, dtype=np.float64)), trans)

    @staticmethod
    def from_axis_angle(axis, angle: float, trans=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        q = np.concatenate(([np.cos(half)], np.sin(half) * axis))
        return Pose(q, trans)

    @staticmethod
    def planar(x: float, y: float, yaw: float) -> "Pose":
        """Pose of a planar base at (x, y) with the given yaw about +z."""
        return Pose.from_axis_angle((0.0, 0.0, 1.0), yaw, (x, y, 0.0))

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def apply(self, point: np.ndarray) -> np.ndarray:
        """Transform a 3-point (or N x 3 array of points) into the parent frame."""
        p = np.asarray(point, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.trans

    def rotate(self, vec: np.ndarray) -> np.ndarray:
        """Rotate a direction vector (no translation)."""
        return np.asarray(vec, dtype=np.float64) @ self.rotation_matrix().T

    def as_array(self) -> np.ndarray:
        """(w, x, y, z, tx, ty, tz) layout used by the dataset serializer."""
        return np.concatenate([self.quat, self.trans])

    @staticmethod
    def from_array(a: np.ndarray) -> "Pose":
        a = np.asarray(a, dtype=np.float64).reshape(7)
        return Pose(a[:4], a[4:])


@dataclass(frozen=True)
class Twist:
    """Element of se(3): angular part in radians, linear part in meters."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        w = np.array(self.angular, dtype=np.float64).reshape(3)
        v = np.array(self.linear, dtype=np.float64).reshape(3)
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "angular", w)
        object.__setattr__(self, "linear", v)


def compose(a: Pose, b: Pose) -> Pose:
    """Group composition a . b (apply b first, then a)."""
    return Pose(_quat_mul(a.quat, b.quat), a.apply(b.trans))


def inverse(p: Pose) -> Pose:
    q_inv = np.array([p.quat[0], -p.quat[1], -p.quat[2], -p.quat[3]])
    r_inv = p.rotation_matrix().T
    return Pose(q_inv, -(r_inv @ p.trans))


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix; angle must be below pi - 1e-6."""
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle >= np.pi - 1e-6:
        raise NearSingularRotationError("rotation angle too close to pi for log")
    axial = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < _SMALL_ANGLE:
        # sin(a)/a ~ 1 - a^2/6
        return axial * 0.5 * (1.0 + angle * angle / 6.0)
    return axial * (0.5 * angle / np.sin(angle))


def rotation_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    k = _skew(w)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * k
        + ((1.0 - np.cos(angle)) / (angle * angle)) * (k @ k)
    )


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(w)
    k = _skew(w)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + ((1.0 - np.cos(angle)) / a2) * k
        + ((angle - np.sin(angle)) / (a2 * angle)) * (k @ k)
    )


def _left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(w)
    k = _skew(w)
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = 0.5 * angle
    cot = 1.0 / np.tan(half)
    return np.eye(3) - 0.5 * k + ((1.0 - half * cot) / (angle * angle)) * (k @ k)


def log_map(p: Pose) -> Twist:
    """se(3) logarithm. Raises NearSingularRotationError at angles >= pi - 1e-6."""
    w = rotation_log(p.rotation_matrix())
    v = _left_jacobian_inv(w) @ p.trans
    return Twist(w, v)


def exp_map(t: Twist) -> Pose:
    r = rotation_exp(t.angular)
    trans = _left_jacobian(t.angular) @ t.linear
    return Pose.from_rotation(r, trans)


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance in meters, rotation angle in radians) between poses."""
    pos_err = float(np.linalg.norm(a.trans - b.trans))
    r = a.rotation_matrix().T @ b.rotation_matrix()
    # atan2 form stays accurate for tiny angles where arccos loses precision.
    axial = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return pos_err, float(np.arctan2(np.linalg.norm(axial), cos_a))


def interpolate_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    """Geodesic interpolation from a (alpha=0) to b (alpha=1) via exp/log."""
    rel = compose(inverse(a), b)
    t = log_map(rel)
    step = exp_map(Twist(alpha * t.angular, alpha * t.linear))
    return compose(a, step)


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_from_matrix(r: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal combination.
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return q
