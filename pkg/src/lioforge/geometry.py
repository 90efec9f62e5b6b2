"""Rigid-body transforms on SO(3) x R^3.

Rotations are stored as unit quaternions in (x, y, z, w) order, the same
order used by TUM trajectory files. Rotation matrices are produced on demand.
The tangent space is the product space: a twist is (axis-angle, translation)
and ``exp_map`` applies the two parts independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8


class DegenerateRotationError(ValueError):
    """Raised when a rotation is too close to pi for a stable logarithm."""


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    K = hat(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def so3_log(R) -> np.ndarray:
    """Rotation matrix to axis-angle vector (valid for angles below pi)."""
    return quat_to_rotvec(matrix_to_quat(R))


def right_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    K = hat(w)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3) - (1.0 - math.cos(theta)) / theta**2 * K
            + (theta - math.sin(theta)) / theta**3 * K @ K)


def right_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    K = hat(w)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    c = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + c * K @ K


# -- quaternion helpers (x, y, z, w) ------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical hemisphere keeps comparisons stable
    if q[3] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s,
             (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s,
             (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(q)


def rotvec_to_quat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    if theta < _SMALL_ANGLE:
        xyz = 0.5 * w
        return quat_normalize([xyz[0], xyz[1], xyz[2], 1.0])
    s = math.sin(0.5 * theta) / theta
    return quat_normalize([w[0] * s, w[1] * s, w[2] * s, math.cos(0.5 * theta)])


def quat_to_rotvec(q) -> np.ndarray:
    q = quat_normalize(q)
    xyz = q[:3]
    s = math.sqrt(float(xyz @ xyz))
    if s < _SMALL_ANGLE:
        return 2.0 * xyz
    theta = 2.0 * math.atan2(s, q[3])
    return xyz * (theta / s)


# -- value types ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rotation + translation; maps points from the child frame to the parent."""

    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        t = np.array(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, w, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotvec_to_quat(w), t)

    @classmethod
    def from_homogeneous(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @property
    def R(self) -> np.ndarray:
        R = self.__dict__.get("_R")
        if R is None:
            R = quat_to_matrix(self.q)
            R.flags.writeable = False
            self.__dict__["_R"] = R
        return R

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "Pose":
        return inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector) of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t

    def rotation_angle(self) -> float:
        return 2.0 * math.atan2(float(np.linalg.norm(self.q[:3])), abs(float(self.q[3])))

    def is_close(self, other: "Pose", tol: float = 1e-9) -> bool:
        dq = min(np.max(np.abs(self.q - other.q)), np.max(np.abs(self.q + other.q)))
        return bool(dq <= tol and np.max(np.abs(self.t - other.t)) <= tol)

    def __repr__(self) -> str:
        return f"Pose(q={np.round(self.q, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


@dataclass(frozen=True)
class StampedPose:
    stamp: float
    pose: Pose

    def __post_init__(self):
        if not math.isfinite(self.stamp) or self.stamp < 0.0:
            raise ValueError(f"invalid stamp {self.stamp!r}")


@dataclass(frozen=True, eq=False)
class Twist:
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_vector(cls, v) -> "Twist":
        """Build from a 6-vector ordered (rotation, translation)."""
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])


# -- operations ----------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a o b``: apply ``b`` first, then ``a``."""
    q = quat_multiply(a.q, b.q)
    t = a.R @ b.t + a.t
    return Pose(q, t)


def inverse(p: Pose) -> Pose:
    qi = np.array([-p.q[0], -p.q[1], -p.q[2], p.q[3]])
    return Pose(qi, -(quat_to_matrix(qi) @ p.t))


def exp_map(tw: Twist) -> Pose:
    return Pose(rotvec_to_quat(tw.rotation), tw.translation)


def log_map(p: Pose) -> Twist:
    if p.rotation_angle() > math.pi - 1e-6:
        raise DegenerateRotationError(
            f"rotation angle {p.rotation_angle():.9f} rad too close to pi")
    return Twist(quat_to_rotvec(p.q), p.t.copy())


def twist_norm(tw: Twist, rot_weight: float = 1.0) -> float:
    """sqrt(|translation|^2 + (rot_weight * |rotation|)^2)."""
    if rot_weight <= 0.0:
        raise ValueError("rot_weight must be positive")
    tr = float(tw.translation @ tw.translation)
    rot = float(tw.rotation @ tw.rotation)
    return math.sqrt(tr + rot_weight * rot_weight * rot)


def boxplus(p: Pose, delta) -> Pose:
    """Right perturbation on rotation, additive on translation.

    ``delta`` is a 6-vector (rotation, translation); this is the update rule
    every solver in the package uses, so analytic Jacobians are taken with
    respect to it.
    """
    delta = np.asarray(delta, dtype=float)
    q = quat_multiply(p.q, rotvec_to_quat(delta[:3]))
    return Pose(q, p.t + delta[3:6])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and rotation angle (rad) between two poses."""
    d = compose(inverse(a), b)
    return float(np.linalg.norm(a.t - b.t)), d.rotation_angle()
