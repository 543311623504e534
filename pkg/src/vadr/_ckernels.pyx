# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport acos, fabs, sin, cos, sqrt

cnp.import_array()


def rotation_distance(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double dot
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        dot = fabs(a[i, 0] * b[i, 0] + a[i, 1] * b[i, 1] + a[i, 2] * b[i, 2] + a[i, 3] * b[i, 3])
        if dot > 1.0:
            dot = 1.0
        o[i] = 2.0 * acos(dot)
    return out


def integrate_orientation(const double[:, ::1] q, const double[:, ::1] omega, double dt):
    cdef Py_ssize_t n = q.shape[0], i
    cdef double rx, ry, rz, angle, half, k, dw, dx, dy, dz, w, x, y, z, ow, ox, oy, oz, nrm
    out = np.empty((n, 4))
    cdef double[:, ::1] o = out
    for i in range(n):
        rx = omega[i, 0] * dt
        ry = omega[i, 1] * dt
        rz = omega[i, 2] * dt
        angle = sqrt(rx * rx + ry * ry + rz * rz)
        half = 0.5 * angle
        if angle > 1e-12:
            k = sin(half) / angle
        else:
            k = 0.5 - angle * angle / 48.0
        dw = cos(half)
        dx = k * rx
        dy = k * ry
        dz = k * rz
        w = q[i, 0]
        x = q[i, 1]
        y = q[i, 2]
        z = q[i, 3]
        ow = dw * w - dx * x - dy * y - dz * z
        ox = dw * x + dx * w + dy * z - dz * y
        oy = dw * y - dx * z + dy * w + dz * x
        oz = dw * z + dx * y - dy * x + dz * w
        nrm = sqrt(ow * ow + ox * ox + oy * oy + oz * oz)
        o[i, 0] = ow / nrm
        o[i, 1] = ox / nrm
        o[i, 2] = oy / nrm
        o[i, 3] = oz / nrm
    return out


def protocol_step(const double[::1] dist, double threshold, long hold_n,
                  cnp.int64_t[::1] hold, cnp.int64_t[::1] successes, cnp.int64_t[::1] stuck,
                  long stuck_limit):
    cdef Py_ssize_t n = dist.shape[0], i
    cdef long need = hold_n if hold_n > 1 else 1
    reached = np.zeros(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    timed_out = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] r = reached.view(np.uint8)
    cdef cnp.npy_bool[::1] s = success.view(np.uint8)
    cdef cnp.npy_bool[::1] t = timed_out.view(np.uint8)
    for i in range(n):
        if dist[i] < threshold:
            r[i] = 1
            hold[i] += 1
        else:
            hold[i] = 0
        if r[i] and hold[i] >= need:
            s[i] = 1
            hold[i] = 0
            successes[i] += 1
            stuck[i] = 0
        else:
            stuck[i] += 1
        if stuck[i] >= stuck_limit:
            t[i] = 1
    return reached, success, timed_out


def replay_frame_hold(const double[:, ::1] quats, const double[:, ::1] goals, const long long[::1] starts,
                      double threshold, long hold_n, long stuck_limit):
    cdef Py_ssize_t n_steps = quats.shape[0], n_goals = goals.shape[0], t, g, start, end
    cdef long need = hold_n if hold_n > 1 else 1
    cdef long count = 0, hold
    cdef bint hit
    cdef double dot
    for g in range(n_goals):
        start = starts[g]
        end = starts[g + 1] if g + 1 < n_goals else n_steps
        hold = 0
        hit = False
        for t in range(start, end):
            dot = fabs(quats[t, 0] * goals[g, 0] + quats[t, 1] * goals[g, 1]
                       + quats[t, 2] * goals[g, 2] + quats[t, 3] * goals[g, 3])
            if dot > 1.0:
                dot = 1.0
            if 2.0 * acos(dot) < threshold:
                hold += 1
            else:
                hold = 0
            if hold >= need:
                hit = True
                break
            if t - start + 1 >= stuck_limit:
                return count, t + 1
        if not hit:
            return count, end
        count += 1
    return count, n_steps
