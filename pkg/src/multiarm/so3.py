"""Rotation-group utilities: hat/vee maps, exponential and logarithm on SO(3).

Conventions: rotation matrices are 3x3 numpy arrays acting on column
vectors; axis-angle vectors are 3-vectors whose norm is the rotation
angle in radians. The canonical axis-angle representative has norm <= pi.
"""

from __future__ import annotations

import numpy as np

# Below this angle the closed-form sinc terms are replaced by series
# expansions to avoid 0/0.
_SMALL_ANGLE = 1e-5
# Above pi minus this the axis is numerically non-unique and log_map raises.
NEAR_PI_MARGIN = 1e-3
# Threshold for switching to the symmetric-part axis extraction, where the
# skew-part formula loses precision.
_EIG_BRANCH = np.pi - 1e-2


class AngleNearPiError(ValueError):
    """Rotation angle within NEAR_PI_MARGIN of pi; the axis is non-unique.

    Carries `axis_angle`, a representative chosen by a fixed convention
    (largest-magnitude axis component made positive) for callers that can
    tolerate the ambiguity.
    """

    def __init__(self, angle: float, axis_angle: np.ndarray):
        super().__init__(f"rotation angle {angle:.6f} is within {NEAR_PI_MARGIN} of pi")
        self.angle = angle
        self.axis_angle = axis_angle


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so that hat(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m) -> np.ndarray:
    """Inverse of hat: extract the 3-vector from a skew-symmetric matrix."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0


def exp_map(v) -> np.ndarray:
    """Rodrigues exponential: axis-angle 3-vector to rotation matrix."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    k = hat(v)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def log_map(r) -> np.ndarray:
    """Axis-angle logarithm of a rotation matrix.

    Raises AngleNearPiError when the rotation angle is within
    NEAR_PI_MARGIN of pi (axis non-unique there).
    """
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta < _SMALL_ANGLE:
        # theta/sin(theta) ~ 1 + theta^2/6 + 7 theta^4/360
        return skew * (1.0 + theta**2 / 6.0 + 7.0 * theta**4 / 360.0)
    if theta > np.pi - NEAR_PI_MARGIN:
        axis, theta_q = _axis_angle_large(r)
        # fixed convention: largest-magnitude component made positive
        pivot = int(np.argmax(np.abs(axis)))
        if axis[pivot] < 0.0:
            axis = -axis
        raise AngleNearPiError(theta_q, axis * theta_q)
    if theta > _EIG_BRANCH:
        axis, theta_q = _axis_angle_large(r)
        if float(np.dot(axis, skew)) < 0.0:
            axis = -axis
        return axis * theta_q
    return skew * (theta / np.sin(theta))


def log_map_any(r) -> np.ndarray:
    """log_map that never raises: near pi it returns the fixed-convention
    representative carried by AngleNearPiError."""
    try:
        return log_map(r)
    except AngleNearPiError as exc:
        return exc.axis_angle


def _axis_angle_large(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle via largest-diagonal quaternion extraction.

    Stable for angles near pi, where both the skew part and arccos of the
    trace lose precision.
    """
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0))
    vec = np.empty(3)
    vec[i] = s / 2.0
    vec[j] = (r[j, i] + r[i, j]) / (2.0 * s)
    vec[k] = (r[k, i] + r[i, k]) / (2.0 * s)
    w = (r[k, j] - r[j, k]) / (2.0 * s)
    if w < 0.0:
        w, vec = -w, -vec
    n = float(np.linalg.norm(vec))
    return vec / n, 2.0 * float(np.arctan2(n, w))


def is_rotation(r, tol: float = 1e-9) -> bool:
    """True if r is orthogonal with unit determinant within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return rotation_defect(r) <= tol and abs(np.linalg.det(r) - 1.0) <= tol


def rotation_defect(r) -> float:
    """Frobenius norm of R^T R - I (orthogonality drift measure)."""
    r = np.asarray(r, dtype=float)
    return float(np.linalg.norm(r.T @ r - np.eye(3)))


def project_to_rotation(r) -> np.ndarray:
    """Nearest rotation matrix (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt
