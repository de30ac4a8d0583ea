"""Quaternion and SO(3) helpers.

Quaternions are stored as (w, x, y, z) with unit norm.  Angular velocities
are spatial: R satisfies dR/dt = skew(omega) R.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quat(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(q1, q2):
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(phi):
    """Unit quaternion of the rotation exp(skew(phi))."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # second-order series keeps accuracy for tiny integrator steps
        half = 0.5 * phi
        return normalize_quat(np.array([1.0 - 0.125 * angle**2, *half]))
    axis = phi / angle
    return np.array([np.cos(0.5 * angle), *(np.sin(0.5 * angle) * axis)])


def rotvec_from_matrix(R):
    """Rotation vector phi with R = exp(skew(phi)), |phi| <= pi."""
    tr = np.trace(R)
    cos_angle = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    axial = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return axial  # axial already ~ phi to O(angle^3)
    if np.pi - angle < 1e-6:
        # near pi the axial vector degenerates; recover axis from R + I
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / max(axis[k], 1e-300)
        axis /= np.linalg.norm(axis)
        if np.dot(axial, axis) < 0:
            axis = -axis
        return angle * axis
    return angle / np.sin(angle) * axial


def skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def left_jacobian_inv(phi):
    """Inverse left Jacobian of SO(3): phi_dot = J_l^{-1}(phi) omega.

    Maps the spatial angular velocity to the rate of the rotation-vector
    coordinate of R = exp(skew(phi)).
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    P = skew(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * P + (1.0 / 12.0) * (P @ P)
    cot_half = angle * 0.5 / np.tan(angle * 0.5)
    coeff = (1.0 - cot_half) / angle**2
    return np.eye(3) - 0.5 * P + coeff * (P @ P)


def left_jacobian(phi):
    """Left Jacobian of SO(3): omega = J_l(phi) phi_dot."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    P = skew(phi)
    if angle < 1e-6:
        return np.eye(3) + 0.5 * P + (1.0 / 6.0) * (P @ P)
    c1 = (1.0 - np.cos(angle)) / angle**2
    c2 = (angle - np.sin(angle)) / angle**3
    return np.eye(3) + c1 * P + c2 * (P @ P)
