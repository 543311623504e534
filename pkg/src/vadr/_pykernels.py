"""Pure numpy implementations of the hot kernels.

Each function mirrors the compiled version in ``_ckernels.pyx`` exactly,
including in-place updates of counter arrays.
"""

from __future__ import annotations

import numpy as np


def rotation_distance(a, b):
    dot = np.abs(np.einsum("ij,ij->i", a, b))
    return 2.0 * np.arccos(np.minimum(dot, 1.0))


def integrate_orientation(q, omega, dt):
    rv = omega * dt
    angle = np.sqrt(np.einsum("ij,ij->i", rv, rv))
    half = 0.5 * angle
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(angle > 1e-12, np.sin(half) / angle, 0.5 - angle * angle / 48.0)
    dw = np.cos(half)
    dx, dy, dz = (k[:, None] * rv).T
    w, x, y, z = q.T
    out = np.stack(
        [
            dw * w - dx * x - dy * y - dz * z,
            dw * x + dx * w + dy * z - dz * y,
            dw * y - dx * z + dy * w + dz * x,
            dw * z + dx * y - dy * x + dz * w,
        ],
        axis=1,
    )
    return out / np.sqrt(np.einsum("ij,ij->i", out, out))[:, None]


def protocol_step(dist, threshold, hold_n, hold, successes, stuck, stuck_limit):
    need = max(int(hold_n), 1)
    reached = dist < threshold
    hold[:] = np.where(reached, hold + 1, 0)
    success = reached & (hold >= need)
    hold[success] = 0
    successes += success
    stuck[:] = np.where(success, 0, stuck + 1)
    return reached, success, stuck >= stuck_limit


def replay_frame_hold(quats, goals, starts, threshold, hold_n, stuck_limit):
    """Recount a recorded episode goal segment by goal segment.

    ``goals[g]`` was the target from frame ``starts[g]`` until the next
    start. A segment counts when it holds ``max(hold_n, 1)`` consecutive
    in-threshold frames before ``stuck_limit`` frames have passed in it;
    counting stops at the first segment that does not. Returns the count
    and the index of the first frame not examined.
    """
    need = max(int(hold_n), 1)
    n_steps = quats.shape[0]
    n_goals = goals.shape[0]
    count = 0
    for g in range(n_goals):
        start = int(starts[g])
        end = int(starts[g + 1]) if g + 1 < n_goals else n_steps
        hold = 0
        hit = False
        for t in range(start, end):
            dot = abs(float(quats[t] @ goals[g]))
            if 2.0 * np.arccos(min(dot, 1.0)) < threshold:
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
