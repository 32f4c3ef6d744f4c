"""Rotation primitives: hat map, Rodrigues exp/log, SO(3) Jacobians, quaternions.

All rotations are 3x3 orthonormal matrices acting as world <- body. The
logarithm is defined for rotation angles below pi; callers stay away from
the boundary (filter increments are small).
"""

from __future__ import annotations

import math

import numpy as np

_SMALL = 1e-4  # below this angle, Taylor expansions replace the closed forms


def skew(v) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def so3_exp(theta) -> np.ndarray:
    """Rodrigues formula, Taylor-expanded near zero."""
    theta = np.asarray(theta, dtype=float)
    angle = math.sqrt(float(theta @ theta))
    k = skew(theta)
    k2 = k @ k
    if angle < _SMALL:
        a = 1.0 - angle ** 2 / 6.0
        b = 0.5 - angle ** 2 / 24.0
    else:
        a = math.sin(angle) / angle
        b = (1.0 - math.cos(angle)) / angle ** 2
    return np.eye(3) + a * k + b * k2


def so3_log(rot) -> np.ndarray:
    """Rotation vector of a rotation matrix (angle < pi)."""
    rot = np.asarray(rot, dtype=float)
    cos_angle = 0.5 * (np.trace(rot) - 1.0)
    cos_angle = min(1.0, max(-1.0, cos_angle))
    angle = math.acos(cos_angle)
    w = 0.5 * np.array([rot[2, 1] - rot[1, 2],
                        rot[0, 2] - rot[2, 0],
                        rot[1, 0] - rot[0, 1]])
    if angle < _SMALL:
        # w = sin(angle)/angle * theta; invert the series
        return w * (1.0 + angle ** 2 / 6.0)
    if angle > math.pi - 1e-7:
        # axis from the symmetric part; sign from the off-diagonal terms
        s = np.diag(rot) + 1.0
        axis = np.sqrt(np.maximum(s / 2.0, 0.0))
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = axis / axis[i] * math.sqrt(s[i] / 2.0)
        j, kk = (i + 1) % 3, (i + 2) % 3
        axis[j] = (rot[i, j] + rot[j, i]) / (4.0 * axis[i]) if axis[i] else 0.0
        axis[kk] = (rot[i, kk] + rot[kk, i]) / (4.0 * axis[i]) if axis[i] else 0.0
        axis = axis / np.linalg.norm(axis)
        if w @ axis < 0:
            axis = -axis
        return axis * angle
    return w * (angle / math.sin(angle))


def left_jacobian(theta) -> np.ndarray:
    """Left Jacobian of SO(3): d(exp(theta+d)) ~ exp(J_l d) exp(theta)."""
    theta = np.asarray(theta, dtype=float)
    angle = math.sqrt(float(theta @ theta))
    k = skew(theta)
    k2 = k @ k
    if angle < _SMALL:
        a = 0.5 - angle ** 2 / 24.0
        b = 1.0 / 6.0 - angle ** 2 / 120.0
    else:
        a = (1.0 - math.cos(angle)) / angle ** 2
        b = (angle - math.sin(angle)) / angle ** 3
    return np.eye(3) + a * k + b * k2


def left_jacobian_inv(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    angle = math.sqrt(float(theta @ theta))
    k = skew(theta)
    k2 = k @ k
    if angle < _SMALL:
        b = 1.0 / 12.0 + angle ** 2 / 720.0
    else:
        b = 1.0 / angle ** 2 - (1.0 + math.cos(angle)) / (2.0 * angle * math.sin(angle))
    return np.eye(3) - 0.5 * k + b * k2


def right_jacobian(theta) -> np.ndarray:
    """Right Jacobian: J_r(theta) = J_l(-theta)."""
    return left_jacobian(-np.asarray(theta, dtype=float))


def right_jacobian_inv(theta) -> np.ndarray:
    return left_jacobian_inv(-np.asarray(theta, dtype=float))


def orthonormalize(rot) -> np.ndarray:
    """Nearest rotation matrix (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(rot, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rot_to_quat(rot) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    rot = np.asarray(rot, dtype=float)
    t = np.trace(rot)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (rot[2, 1] - rot[1, 2]) / s,
                      (rot[0, 2] - rot[2, 0]) / s,
                      (rot[1, 0] - rot[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(rot)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(rot[i, i] - rot[j, j] - rot[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in np.asarray(q, dtype=float) / np.linalg.norm(q))
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
