"""Quaternion helpers on ``(..., 4)`` arrays stored as ``(w, x, y, z)``."""

from __future__ import annotations

import logging

import numpy as np

from vadr import kernels

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-9
RENORM_TOL = 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a, b):
    """Hamilton product ``a * b`` with broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def from_rotvec(rotvec):
    """Exponential map from rotation vectors; safe at zero."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle -> 1/2 as angle -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(angle > 1e-12, np.sin(half) / angle, 0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half), k * rotvec], axis=-1)


def to_rotvec(q):
    """Log map, choosing the short way round (``w >= 0``)."""
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(s > 1e-12, angle / s, 2.0)
    return k * v


def to_matrix(q):
    q = normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def from_matrix(m):
    """Rotation matrix to unit quaternion with ``w >= 0`` (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    out = normalize(out)
    out = np.where(out[:, :1] < 0, -out, out)
    return out.reshape(m.shape[:-2] + (4,))


def rotate(q, v):
    """Rotate vectors ``v`` by quaternions ``q``."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def random(rng: np.random.Generator, n: int | None = None):
    """Uniform rotations: a normalized isotropic 4D Gaussian."""
    shape = (4,) if n is None else (n, 4)
    return normalize(rng.standard_normal(shape))


def _checked_unit(q, name):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValueError(f"{name}: expected quaternions with trailing size 4, got shape {q.shape}")
    norm = np.linalg.norm(q, axis=-1)
    err = np.abs(norm - 1.0)
    if np.any(~np.isfinite(norm)) or np.any(err > RENORM_TOL):
        worst = float(np.nanmax(err)) if np.any(np.isfinite(err)) else float("nan")
        raise ValueError(f"{name}: not a unit quaternion (|norm - 1| = {worst:.3g})")
    if np.any(err > UNIT_TOL):
        logger.warning("%s: renormalizing quaternion with |norm - 1| = %.3g", name, float(err.max()))
        q = q / norm[..., None]
    return q


def rotation_distance(q1, q2):
    """Geodesic angle ``2 acos(min(1, |<q1, q2>|))`` in ``[0, pi]``.

    Respects the double cover, so ``q`` and ``-q`` are at distance zero.
    Inputs off the unit sphere by more than 1e-6 raise ``ValueError``;
    smaller drift is renormalized with a warning.
    """
    q1 = _checked_unit(q1, "q1")
    q2 = _checked_unit(q2, "q2")
    a, b = np.broadcast_arrays(q1, q2)
    shape = a.shape[:-1]
    d = kernels.rotation_distance(
        np.ascontiguousarray(a.reshape(-1, 4)), np.ascontiguousarray(b.reshape(-1, 4))
    )
    d = d.reshape(shape)
    return float(d) if d.ndim == 0 else d
