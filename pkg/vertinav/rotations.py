"""Quaternion and rotation helpers.

Quaternions are scalar-first ``[w, x, y, z]`` and rotate body vectors into
the navigation frame. Small-angle vectors are rotation vectors applied on
the left: ``C_true = Exp(phi) @ C_est``.
"""

import math
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v x]``."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p * q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    # keep the scalar part non-negative
    return q if q[0] >= 0 else -q


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Direction cosine matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _from_scipy(r: Rotation) -> np.ndarray:
    x, y, z, w = r.as_quat()
    return quat_normalize(np.array([w, x, y, z]))


def _to_scipy(q: np.ndarray) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


def dcm_to_quat(c: np.ndarray) -> np.ndarray:
    return _from_scipy(Rotation.from_matrix(c))


def rotvec_to_quat(phi) -> np.ndarray:
    return _from_scipy(Rotation.from_rotvec(np.asarray(phi, dtype=float)))


def so3_exp(phi) -> np.ndarray:
    """Rotation matrix of a rotation vector."""
    return Rotation.from_rotvec(np.asarray(phi, dtype=float)).as_matrix()


def so3_log(c: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix."""
    return Rotation.from_matrix(c).as_rotvec()


def euler_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-nav quaternion from roll, pitch, yaw [rad] (yaw about up, then pitch, then roll)."""
    return _from_scipy(Rotation.from_euler("ZYX", [yaw, pitch, roll]))


def quat_to_euler(q: np.ndarray) -> Tuple[float, float, float]:
    """Roll, pitch, yaw [rad] of a body-to-nav quaternion."""
    yaw, pitch, roll = _to_scipy(q).as_euler("ZYX")
    return float(roll), float(pitch), float(yaw)


def attitude_error(c_true: np.ndarray, c_est: np.ndarray) -> np.ndarray:
    """Left small-angle error ``Log(C_true C_est^T)``."""
    return so3_log(c_true @ c_est.T)


def angle_between(c_a: np.ndarray, c_b: np.ndarray) -> float:
    """Rotation angle separating two attitudes [rad]."""
    return float(np.linalg.norm(attitude_error(c_a, c_b)))


def first_order_increment(rate, dt: float) -> np.ndarray:
    """First-order quaternion increment ``[1, rate dt / 2]`` (not normalised)."""
    half = 0.5 * dt * np.asarray(rate, dtype=float)
    return np.array([1.0, half[0], half[1], half[2]])


def heading_from_vector(east: float, north: float) -> float:
    """ENU yaw [rad] of a horizontal direction, counter-clockwise from east."""
    return math.atan2(north, east)
