"""Axis-angle rotation utilities (Rodrigues map, log map, geodesic distance).

Axis-angle vectors encode a rotation as ``angle * unit_axis`` in radians. All
functions broadcast over leading batch dimensions and operate in float64.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Convert axis-angle vectors (..., 3) to rotation matrices (..., 3, 3).

    Uses the Rodrigues formula; near zero angle it falls back to the
    first-order expansion I + [w]_x, which is exact to machine precision there.
    """
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-8
    # Avoid 0/0; the small-angle branch overrides these entries below.
    axis = aa / np.where(small, 1.0, theta)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + (1.0 - c) * (K @ K)

    if np.any(small):
        # First-order map for tiny angles: I + skew(aa).
        ax, ay, az = aa[..., 0], aa[..., 1], aa[..., 2]
        Ks = np.stack(
            [
                np.stack([zero, -az, ay], axis=-1),
                np.stack([az, zero, -ax], axis=-1),
                np.stack([-ay, ax, zero], axis=-1),
            ],
            axis=-2,
        )
        R = np.where(small[..., None], eye + Ks, R)
    return R


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Convert rotation matrices (..., 3, 3) to quaternions (..., 4), w >= 0.

    Shepperd's branch selection: seed from the largest of the trace and the
    three diagonal entries, which keeps every branch numerically stable.
    """
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    q = np.empty(batch + (4,))

    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    choices = np.stack([tr, m00, m11, m22], axis=-1)
    case = np.argmax(choices, axis=-1)

    # Case 0: trace dominates.
    s0 = np.sqrt(np.maximum(tr + 1.0, 0.0)) * 2.0
    s0_safe = np.where(s0 == 0.0, 1.0, s0)
    q0 = np.stack(
        [
            0.25 * s0,
            (R[..., 2, 1] - R[..., 1, 2]) / s0_safe,
            (R[..., 0, 2] - R[..., 2, 0]) / s0_safe,
            (R[..., 1, 0] - R[..., 0, 1]) / s0_safe,
        ],
        axis=-1,
    )
    # Case k (k = 1, 2, 3): diagonal entry k-1 dominates.
    qs = [q0]
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        s = np.sqrt(np.maximum(1.0 + R[..., i, i] - R[..., j, j] - R[..., k, k], 0.0)) * 2.0
        s_safe = np.where(s == 0.0, 1.0, s)
        comp = np.empty(batch + (4,))
        comp[..., 0] = (R[..., k, j] - R[..., j, k]) / s_safe
        comp[..., 1 + i] = 0.25 * s
        comp[..., 1 + j] = (R[..., j, i] + R[..., i, j]) / s_safe
        comp[..., 1 + k] = (R[..., k, i] + R[..., i, k]) / s_safe
        qs.append(comp)

    stacked = np.stack(qs, axis=-2)  # (..., 4 cases, 4)
    q = np.take_along_axis(stacked, case[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Convert rotation matrices (..., 3, 3) to axis-angle vectors (..., 3).

    Inverse of :func:`axis_angle_to_matrix` via quaternions; returns the
    representative with angle in [0, pi].
    """
    q = matrix_to_quaternion(R)
    w = q[..., 0]
    xyz = q[..., 1:]
    norm = np.linalg.norm(xyz, axis=-1)
    theta = 2.0 * np.arctan2(norm, w)
    small = norm < 1e-9
    scale = np.where(small, 2.0, theta / np.where(small, 1.0, norm))
    return xyz * scale[..., None]


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Geodesic distance (radians, in [0, pi]) between rotation matrices."""
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    M = np.swapaxes(Ra, -1, -2) @ Rb
    tr = np.clip((np.trace(M, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(tr)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (3, 3) via quaternion sampling."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
