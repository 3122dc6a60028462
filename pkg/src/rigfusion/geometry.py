"""Rotation-vector and rigid-transform algebra.

Rotations are carried as 3-vectors in angle-axis form (direction = axis,
magnitude = angle in radians, canonical magnitude in [0, pi]).  Rigid
transforms are carried in minimal form as a ``BodyPose`` (rotation vector +
translation); the 4x4 homogeneous matrix is a derived view, never the stored
representation.  A pose packs to / unpacks from a 6-vector ordered
``[r, t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# Below this angle Rodrigues coefficients switch to their 2nd-order Taylor
# expansions to avoid 0/0.
SMALL_ANGLE = 1e-8


def _as_vec3(v, name="vector"):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise InvalidArgumentError(f"{name} must have shape (3,), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must be finite")
    return a


def hat(r) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector: hat(r) @ v == cross(r, v)."""
    r = _as_vec3(r, "rotation vector")
    return np.array(
        [
            [0.0, -r[2], r[1]],
            [r[2], 0.0, -r[0]],
            [-r[1], r[0], 0.0],
        ]
    )


def exp_so3(r) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues closed form)."""
    r = _as_vec3(r, "rotation vector")
    angle = float(np.linalg.norm(r))
    k = hat(r)
    if angle < SMALL_ANGLE:
        # 2nd-order Taylor of sin(a)/a and (1-cos(a))/a^2
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(R) -> np.ndarray:
    """Rotation vector of a rotation matrix, angle canonicalized to [0, pi].

    Raises if R is not orthonormal (det +1) within 1e-6.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise InvalidArgumentError(f"rotation matrix must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidArgumentError("rotation matrix must be finite")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > 1e-6 or np.linalg.det(R) < 0.0:
        raise InvalidArgumentError(
            f"matrix is not a rotation (orthonormality error {err:.2e}, "
            f"det {np.linalg.det(R):.6f})"
        )
    cos_angle = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < SMALL_ANGLE:
        return w
    if np.pi - angle < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # symmetric part R ~ 2*outer(n, n) - I.
        A = 0.5 * (R + np.eye(3))
        i = int(np.argmax(np.diag(A)))
        n = A[:, i] / np.sqrt(max(A[i, i], 1e-15))
        n = n / np.linalg.norm(n)
        # Tie rule: first nonzero component positive.
        for c in n:
            if abs(c) > 1e-12:
                if c < 0.0:
                    n = -n
                break
        # w still carries the correct sign when angle < pi; use it if usable.
        s = float(n @ w)
        if np.pi - angle > 1e-12 and s < 0.0:
            n = -n
        return angle * n
    return (angle / np.sin(angle)) * w


def rotate(r, points) -> np.ndarray:
    """Apply exp_so3(r) to one point or an (n, 3) stack of points."""
    R = exp_so3(r)
    return np.asarray(points, dtype=float) @ R.T


@dataclass
class BodyPose:
    """Rigid transform in minimal form: rotation vector + translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = _as_vec3(self.rotation, "rotation")
        self.translation = _as_vec3(self.translation, "translation")

    @staticmethod
    def identity() -> "BodyPose":
        return BodyPose(np.zeros(3), np.zeros(3))

    @property
    def R(self) -> np.ndarray:
        return exp_so3(self.rotation)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 view (derived, not stored)."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Transform one point or an (n, 3) stack of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def copy(self) -> "BodyPose":
        return BodyPose(self.rotation.copy(), self.translation.copy())


def pose_from_matrix(T) -> BodyPose:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise InvalidArgumentError(f"expected 4x4 matrix, got {T.shape}")
    return BodyPose(log_so3(T[:3, :3]), T[:3, 3].copy())


def compose(a: BodyPose, b: BodyPose) -> BodyPose:
    """Pose product: matrix(compose(a, b)) == matrix(a) @ matrix(b)."""
    Ra = a.R
    return BodyPose(log_so3(Ra @ b.R), Ra @ b.translation + a.translation)


def inverse(a: BodyPose) -> BodyPose:
    Ra = a.R
    return BodyPose(-a.rotation, -(Ra.T @ a.translation))


def pose_from_x(x) -> BodyPose:
    """Pose from packed 6-vector [r, t]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (6,):
        raise InvalidArgumentError(f"packed pose must have shape (6,), got {x.shape}")
    return BodyPose(x[:3].copy(), x[3:].copy())


def x_from_pose(T: BodyPose) -> np.ndarray:
    """Packed 6-vector [r, t] of a pose."""
    return np.concatenate([T.rotation, T.translation])


def canonicalize_rotvec(r) -> np.ndarray:
    """Re-wrap a rotation vector so its magnitude lies in [0, pi]."""
    r = _as_vec3(r, "rotation vector")
    angle = float(np.linalg.norm(r))
    if angle <= np.pi:
        return r
    return log_so3(exp_so3(r))


def right_jacobian_so3(r) -> np.ndarray:
    """Right Jacobian J_r of SO(3) at r.

    exp(r + d) ~= exp(r) @ exp(J_r(r) @ d) for small d.
    """
    r = _as_vec3(r, "rotation vector")
    angle = float(np.linalg.norm(r))
    k = hat(r)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    c1 = (1.0 - np.cos(angle)) / a2
    c2 = (angle - np.sin(angle)) / (a2 * angle)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def right_jacobian_inv_so3(r) -> np.ndarray:
    """Inverse of the right Jacobian of SO(3) at r (valid for |r| < pi)."""
    r = _as_vec3(r, "rotation vector")
    angle = float(np.linalg.norm(r))
    k = hat(r)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 12.0
    c = 1.0 / (angle * angle) - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * k + c * (k @ k)


def rotvec_to_quat(r) -> np.ndarray:
    """Unit quaternion [qx, qy, qz, qw] of a rotation vector."""
    r = _as_vec3(r, "rotation vector")
    angle = float(np.linalg.norm(r))
    if angle < SMALL_ANGLE:
        q = np.array([0.5 * r[0], 0.5 * r[1], 0.5 * r[2], 1.0])
        return q / np.linalg.norm(q)
    axis = r / angle
    s = np.sin(0.5 * angle)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(0.5 * angle)])


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector of a unit quaternion [qx, qy, qz, qw]."""
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidArgumentError(f"quaternion must have shape (4,), got {q.shape}")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > 1e-6:
        raise InvalidArgumentError(f"quaternion norm {n:.8f} is not 1 within 1e-6")
    q = q / n
    if q[3] < 0.0:
        q = -q
    vec = q[:3]
    s = float(np.linalg.norm(vec))
    angle = 2.0 * np.arctan2(s, q[3])
    if s < SMALL_ANGLE:
        return 2.0 * vec
    return (angle / s) * vec
