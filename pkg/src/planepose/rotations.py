"""Rotation representations, conversions, distances, and averaging.

Conventions used throughout the package:

* Quaternions are ``(w, x, y, z)``, unit norm, canonical sign (``w >= 0``;
  if ``w == 0`` the first nonzero of ``(x, y, z)`` is positive).
* Rotation matrices are 3x3, right-handed, and act on column vectors.
* The continuous 6D rotation encoding is the first two matrix columns,
  concatenated: ``(r1, r2, r3, r4, r5, r6) = (col0, col1)``. Reconstruction
  is Gram-Schmidt: normalize col0, orthogonalize col1 against it, complete
  with the cross product.
* Angles cross API boundaries in degrees; internal math uses radians.

Most functions broadcast over leading axes, so ``(N, 6)`` or ``(N, 3, 3)``
inputs are handled in one vectorized call.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput, EmptySet, InvalidRotation, NotUnit

# Orthonormality slack accepted on *inputs*; outputs are tight to 1e-9.
INPUT_TOL = 1e-6


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0, breaking w == 0 ties on the first nonzero of xyz."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    flat = out.reshape(-1, 4)
    first_nonzero = np.argmax(flat != 0.0, axis=1)
    lead = flat[np.arange(flat.shape[0]), first_nonzero]
    flat[lead < 0.0] *= -1.0
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return the unit, canonical-sign quaternion. Raises NotUnit on ~zero norm."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise NotUnit("quaternion norm is (near) zero")
    return quat_canonical(q / norm)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_multiply(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Hamilton product qa * qb (apply qb first, then qa)."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    w1, x1, y1, z1 = (qa[..., i] for i in range(4))
    w2, x2, y2, z2 = (qb[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    rows = [
        [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
        [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
        [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd-style matrix-to-quaternion conversion, canonical sign."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotation(f"expected (..., 3, 3) matrix, got {R.shape}")
    single = R.ndim == 2
    Rb = R.reshape(-1, 3, 3)
    out = np.empty((Rb.shape[0], 4))
    for k, m in enumerate(Rb):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = np.sqrt(tr + 1.0) * 2.0
            qw = 0.25 * s
            qx = (m[2, 1] - m[1, 2]) / s
            qy = (m[0, 2] - m[2, 0]) / s
            qz = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            qw = (m[2, 1] - m[1, 2]) / s
            qx = 0.25 * s
            qy = (m[0, 1] + m[1, 0]) / s
            qz = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            qw = (m[0, 2] - m[2, 0]) / s
            qx = (m[0, 1] + m[1, 0]) / s
            qy = 0.25 * s
            qz = (m[1, 2] + m[2, 1]) / s
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            qw = (m[1, 0] - m[0, 1]) / s
            qx = (m[0, 2] + m[2, 0]) / s
            qy = (m[1, 2] + m[2, 1]) / s
            qz = 0.25 * s
        out[k] = (qw, qx, qy, qz)
    out = quat_normalize(out)
    return out[0] if single else out.reshape(R.shape[:-2] + (4,))


def rotvec_to_quat(rv: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector (radians) to unit quaternion."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc-style series below ~1e-8 rad to avoid 0/0
    small = angle < 1e-8
    scale = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    q = np.concatenate([np.cos(half), rv * scale], axis=-1)
    return quat_normalize(q)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation as a quaternion (normalized 4D Gaussian)."""
    return quat_normalize(rng.normal(size=4))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return quat_to_matrix(random_quaternion(rng))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def rotation_defect(R: np.ndarray) -> float:
    """Largest deviation from orthonormality / unit determinant."""
    R = np.asarray(R, dtype=float)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max()
    det = np.abs(np.linalg.det(R) - 1.0).max()
    return float(max(ortho, det))


def require_rotation(R: np.ndarray, tol: float = INPUT_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotation(f"expected (..., 3, 3) matrix, got {R.shape}")
    defect = rotation_defect(R)
    if defect > tol:
        raise InvalidRotation(f"matrix is not a rotation (defect {defect:.3g} > {tol:g})")
    return R


def require_unit_quat(q: np.ndarray, tol: float = INPUT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise NotUnit(f"expected (..., 4) quaternion, got {q.shape}")
    err = np.abs(np.linalg.norm(q, axis=-1) - 1.0).max()
    if err > tol:
        raise NotUnit(f"quaternion norm off by {err:.3g} > {tol:g}")
    return q


# ---------------------------------------------------------------------------
# 6D continuous representation
# ---------------------------------------------------------------------------

def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt reconstruction of a rotation from its 6D encoding.

    ``r[..., :3]`` is the un-normalized first column, ``r[..., 3:]`` the
    un-orthogonalized second. Output columns are ``b1 = a1/|a1|``,
    ``b2 = normalize(a2 - (b1.a2) b1)``, ``b3 = b1 x b2``.

    Raises DegenerateInput when a column is (near) zero or the two columns
    are within ~1e-6 rad of collinear; such vectors indicate upstream
    corruption and are rejected rather than perturbed.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 6:
        raise DegenerateInput(f"expected (..., 6) vector, got {r.shape}")
    a1 = r[..., :3]
    a2 = r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    if np.any(n1 < 1e-12) or np.any(n2 < 1e-12):
        raise DegenerateInput("6D vector has a (near) zero column")
    u1 = a1 / n1[..., None]
    u2 = a2 / n2[..., None]
    # |u1 x u2| = sin(angle); rejects both near-parallel and near-antiparallel
    if np.any(np.linalg.norm(np.cross(u1, u2), axis=-1) <= 1e-6):
        raise DegenerateInput("6D vector columns are collinear")
    b1 = u1
    proj = np.sum(b1 * a2, axis=-1, keepdims=True)
    b2 = a2 - proj * b1
    b2 = b2 / np.linalg.norm(b2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """Inverse encoding: the first two columns of R, concatenated."""
    R = require_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def geodesic_deg(Ra: np.ndarray, Rb: np.ndarray) -> float | np.ndarray:
    """Rotation angle of Ra^-1 Rb in degrees, in [0, 180].

    Mathematically arccos((trace - 1) / 2) of the relative rotation; it is
    evaluated as atan2(|skew|, (trace - 1)/2), which is the same quantity
    with uniform accuracy near 0 and 180 degrees.
    """
    Ra = require_rotation(Ra)
    Rb = require_rotation(Rb)
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    tr = np.trace(rel, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    sk = np.stack(
        [
            rel[..., 2, 1] - rel[..., 1, 2],
            rel[..., 0, 2] - rel[..., 2, 0],
            rel[..., 1, 0] - rel[..., 0, 1],
        ],
        axis=-1,
    )
    sin = 0.5 * np.linalg.norm(sk, axis=-1)
    ang = np.degrees(np.arctan2(sin, cos))
    return float(ang) if ang.ndim == 0 else ang


def quaternion_angle_deg(qa: np.ndarray, qb: np.ndarray) -> float | np.ndarray:
    """Angle between rotations via 2 arccos(|scalar part of qa^-1 qb|).

    The absolute value resolves the sign ambiguity of the double cover, so
    the result lies in [0, 180] degrees.
    """
    qa = require_unit_quat(qa)
    qb = require_unit_quat(qb)
    rel = quat_multiply(quat_conjugate(qa), qb)
    w = np.clip(np.abs(rel[..., 0]), 0.0, 1.0)
    ang = np.degrees(2.0 * np.arccos(w))
    return float(ang) if ang.ndim == 0 else ang


# ---------------------------------------------------------------------------
# set statistics
# ---------------------------------------------------------------------------

def translation_stats(points) -> tuple[np.ndarray, np.ndarray, float]:
    """Centroid, per-point Euclidean distances to it, and their RMS."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptySet("translation_stats of an empty set")
    pts = pts.reshape(-1, 3)
    centroid = pts.mean(axis=0)
    dists = np.linalg.norm(pts - centroid, axis=1)
    rms = float(np.sqrt(np.mean(dists**2)))
    return centroid, dists, rms


def chordal_cost(Rc: np.ndarray, rotations) -> float:
    """Sum of squared Frobenius distances from Rc to each rotation."""
    Rs = np.asarray(rotations, dtype=float)
    return float(np.sum((Rs - Rc) ** 2))


def chordal_mean(rotations) -> np.ndarray:
    """Rotation minimizing the summed squared Frobenius distance to the set.

    Closed form: project M = sum(R_i) onto SO(3). With M = U S V^T the
    minimizer is U diag(1, 1, det(U V^T)) V^T; this is exact, no iteration.
    """
    Rs = np.asarray(rotations, dtype=float)
    if Rs.size == 0:
        raise EmptySet("chordal_mean of an empty set")
    Rs = Rs.reshape(-1, 3, 3)
    require_rotation(Rs)
    M = Rs.sum(axis=0)
    U, s, Vt = np.linalg.svd(M)
    d = np.linalg.det(U @ Vt)
    if s[1] + s[2] * d < 1e-12:
        raise DegenerateInput("rotation set has no unique chordal mean")
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def rotation_stats(rotations) -> tuple[np.ndarray, np.ndarray, float]:
    """Chordal mean, per-item geodesic residuals (deg), and their RMS (deg)."""
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    mean = chordal_mean(Rs)
    dists = np.atleast_1d(geodesic_deg(Rs, mean))
    rms = float(np.sqrt(np.mean(dists**2)))
    return mean, dists, rms


# ---------------------------------------------------------------------------
# Euler I/O (serialization boundary only)
# ---------------------------------------------------------------------------

def euler_xyz_deg_to_matrix(angles_deg) -> np.ndarray:
    """Intrinsic x-y-z Euler angles (degrees) to a rotation matrix.

    Intrinsic composition about the moving frame: R = Rx(ax) Ry(ay) Rz(az).
    """
    ax, ay, az = np.radians(np.asarray(angles_deg, dtype=float))
    ca, sa = np.cos(ax), np.sin(ax)
    cb, sb = np.cos(ay), np.sin(ay)
    cc, sc = np.cos(az), np.sin(az)
    return np.array(
        [
            [cb * cc, -cb * sc, sb],
            [ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb],
            [sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb],
        ]
    )


def matrix_to_euler_xyz_deg(R: np.ndarray) -> np.ndarray:
    """Inverse of euler_xyz_deg_to_matrix; az fixed to 0 at gimbal lock."""
    R = require_rotation(R)
    sy = np.clip(R[0, 2], -1.0, 1.0)
    ay = np.arcsin(sy)
    if abs(sy) < 1.0 - 1e-10:
        ax = np.arctan2(-R[1, 2], R[2, 2])
        az = np.arctan2(-R[0, 1], R[0, 0])
    else:
        # cos(ay) ~ 0: only ax +/- az observable, put everything in ax
        ax = np.arctan2(np.sign(sy) * R[1, 0], R[1, 1])
        az = 0.0
    return np.degrees(np.array([ax, ay, az]))
