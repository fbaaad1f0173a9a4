"""SO(3) helpers.

Rotations are plain ``(3, 3)`` float arrays. Every function here also accepts
a leading batch dimension, so ``so3_exp`` of an ``(N, 3)`` array returns an
``(N, 3, 3)`` stack. The smoother relies on that to evaluate a whole window
of factors at once.
"""
from __future__ import annotations

import numpy as np

EXP_SMALL_ANGLE = 1e-8
LOG_SMALL_ANGLE = 1e-8
LOG_NEAR_PI = np.pi - 1e-6


def skew(q: np.ndarray) -> np.ndarray:
    """Return ``[q]x`` so that ``skew(q) @ w == cross(q, w)``."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (3, 3))
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula, second-order Taylor expansion below 1e-8 rad."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)
    K = skew(omega)
    K2 = K @ K
    small = theta < EXP_SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` with norm in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    out = np.empty((R.shape[0], 3))
    tr = np.trace(R, axis1=-2, axis2=-1)
    cos_t = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.stack([R[:, 2, 1] - R[:, 1, 2],
                  R[:, 0, 2] - R[:, 2, 0],
                  R[:, 1, 0] - R[:, 0, 1]], axis=-1)

    small = theta < LOG_SMALL_ANGLE
    near_pi = theta > LOG_NEAR_PI
    regular = ~(small | near_pi)

    # theta/(2 sin theta) -> 1/2 + theta^2/12
    out[small] = (0.5 + theta[small, None] ** 2 / 12.0) * w[small]
    th = theta[regular]
    out[regular] = (th / (2.0 * np.sin(th)))[:, None] * w[regular]
    for k in np.flatnonzero(near_pi):
        out[k] = _log_near_pi(R[k], theta[k])
    return out.reshape(batch + (3,))


def _log_near_pi(R: np.ndarray, theta: float) -> np.ndarray:
    # R + R^T = 2 cos(t) I + 2 (1 - cos t) u u^T; read the axis off the
    # largest diagonal entry and fix its sign from the antisymmetric part.
    B = 0.5 * (R + R.T) - np.cos(theta) * np.eye(3)
    B /= 1.0 - np.cos(theta)
    i = int(np.argmax(np.diag(B)))
    u = B[:, i] / np.sqrt(max(B[i, i], 0.0))
    u /= np.linalg.norm(u)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if w @ u < 0.0:
        u = -u
    return theta * u


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = skew(phi)
    small = theta < 1e-5
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0,
                 (safe - np.sin(safe)) / safe**3)
    return np.eye(3) - a[..., None, None] * K + b[..., None, None] * (K @ K)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = skew(phi)
    small = theta < 1e-5
    safe = np.where(small, 1.0, theta)
    c = np.where(small, 1.0 / 12.0 + theta**2 / 720.0,
                 1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)))
    return np.eye(3) + 0.5 * K + c[..., None, None] * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(U.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3) or not np.all(np.isfinite(R)):
        return False
    err = R @ np.swapaxes(R, -1, -2) - np.eye(3)
    return bool(np.all(np.abs(err) <= tol)
                and np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def rot_x(angle: float) -> np.ndarray:
    return so3_exp(np.array([angle, 0.0, 0.0]))


def rot_y(angle: float) -> np.ndarray:
    return so3_exp(np.array([0.0, angle, 0.0]))


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Quaternion ``(x, y, z, w)`` to rotation matrix; normalises first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(x, y, z, w)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    q = np.empty((R.shape[0], 4))
    tr = np.trace(R, axis1=-2, axis2=-1)
    for k in range(R.shape[0]):
        m = R[k]
        if tr[k] > 0.0:
            s = 2.0 * np.sqrt(tr[k] + 1.0)
            q[k] = [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                    (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        else:
            i = int(np.argmax(np.diag(m)))
            j, l = (i + 1) % 3, (i + 2) % 3
            s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[l, l])
            v = np.empty(4)
            v[i] = 0.25 * s
            v[j] = (m[j, i] + m[i, j]) / s
            v[l] = (m[l, i] + m[i, l]) / s
            v[3] = (m[l, j] - m[j, l]) / s
            q[k] = v
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q[q[:, 3] < 0.0] *= -1.0
    return q.reshape(batch + (4,))


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of ``R`` in radians."""
    return np.linalg.norm(so3_log(R), axis=-1)
