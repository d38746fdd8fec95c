"""SO(3) primitives: hat/vee, exponential and logarithm maps, Jacobians.

Rotation vectors are length-3 arrays in radians.  ``exp_so3`` follows the
Rodrigues formula and ``log_so3`` is its inverse on angles in [0, pi].
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-7


def skew(v) -> np.ndarray:
    """Cross-product matrix, ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (antisymmetric part only)."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def exp_so3(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    k = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    u = theta / angle
    c, s = np.cos(angle), np.sin(angle)
    return c * np.eye(3) + s * skew(u) + (1.0 - c) * np.outer(u, u)


def log_so3(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_angle = 0.5 * float(np.linalg.norm(w))
    # atan2 keeps full precision at both ends where arccos is ill-conditioned
    angle = float(np.arctan2(sin_angle, cos_angle))
    if angle < SMALL_ANGLE:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        # R - R^T vanishes near pi; the symmetric part is cos I + (1 - cos) u u^T,
        # so take the column with the largest diagonal entry of u u^T.
        B = (0.5 * (R + R.T) - cos_angle * np.eye(3)) / (1.0 - cos_angle)
        i = int(np.argmax(np.diag(B)))
        u = B[:, i] / np.sqrt(max(B[i, i], 1e-300))
        u /= np.linalg.norm(u)
        # keep the sign consistent with the residual antisymmetric part
        if np.dot(u, w) < 0.0:
            u = -u
        return angle * u
    return angle * (w / (2.0 * sin_angle))


def right_jacobian(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    k = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    u = theta / angle
    s = np.sin(angle) / angle
    # 1 - cos written as 2 sin^2(a/2): no cancellation for small angles
    c = 2.0 * np.sin(0.5 * angle) ** 2 / angle
    return s * np.eye(3) + (1.0 - s) * np.outer(u, u) - c * skew(u)


def left_jacobian(theta) -> np.ndarray:
    return right_jacobian(-np.asarray(theta, dtype=float))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of ``M`` with det = +1."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(pitch: float) -> np.ndarray:
    c, s = np.cos(pitch), np.sin(pitch)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
