"""Multi-camera cube pose from labelled corner keypoints.

Per camera a PnP solve gives a pose and its reprojection residual;
cameras whose residual is too large are dropped, the surviving views
triangulate each corner, and the triangulated corners are registered to
the cube model with a proper-rotation least-squares fit.

Frames: a camera's ``rotation``/``translation`` map camera coordinates to
the palm frame (``X_palm = R X_cam + t``); camera axes are x right, y down,
z forward. Poses returned by this module map cube coordinates to the palm
frame.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from vadr import quat
from vadr.stats import ci90

CUBE_EDGE = 0.065
DEFAULT_RESOLUTION = (320, 240)
FILTER_THRESHOLD_PX = 5.0
POSE_HEADER = ("Experiment", "Avg. Rotation Error", "Avg. Translation Error X", "Avg. Translation Error Y",
               "Avg. Translation Error Z")
PIPELINE_RATE_HZ = 15.0
KEYPOINT_FIELDS = ("camera_id", "corner_id", "u", "v", "valid")
KEYPOINT_SCHEMA = "vadr.keypoints/1"
REPORT_SCHEMA = "vadr.pose_report/1"


class PoseError(ValueError):
    """A geometric precondition does not hold (too few or degenerate points)."""


def _skew(v):
    v = np.asarray(v, dtype=np.float64)
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def _rotvec_matrix(w):
    return quat.to_matrix(quat.from_rotvec(w))


def _orthonormalize(m):
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidPose:
    """Rotation (unit quaternion, w first) and translation in metres."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat.normalize(np.asarray(self.rotation, dtype=np.float64)))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls):
        return cls(quat.IDENTITY, np.zeros(3))

    @classmethod
    def from_matrix(cls, r, t):
        return cls(quat.from_matrix(np.asarray(r)), t)

    @property
    def matrix(self) -> np.ndarray:
        return quat.to_matrix(self.rotation)

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self * other``: apply ``other`` first."""
        return RigidPose.from_matrix(self.matrix @ other.matrix, self.apply(other.translation))

    def inverse(self) -> "RigidPose":
        r = self.matrix
        return RigidPose.from_matrix(r.T, -r.T @ self.translation)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = DEFAULT_RESOLUTION[0]
    height: int = DEFAULT_RESOLUTION[1]
    name: str = ""

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"camera {self.name!r}: focal lengths must be positive")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError(f"camera {self.name!r}: rotation must be orthonormal with determinant +1")

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), fx=300.0, fy=300.0, cx=None, cy=None,
                width=DEFAULT_RESOLUTION[0], height=DEFAULT_RESOLUTION[1], name=""):
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(fx, fy, width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                   np.stack([x, y, z], axis=1), eye, width, height, name)

    @property
    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        return self.rotation.T, -self.rotation.T @ self.translation

    def to_camera(self, points):
        r, t = self.world_to_camera
        return np.asarray(points, dtype=np.float64) @ r.T + t

    def normalized(self, uv):
        uv = np.asarray(uv, dtype=np.float64)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)


@dataclass(frozen=True)
class CubeModel:
    edge: float = CUBE_EDGE

    @property
    def corners(self) -> np.ndarray:
        """Corner ``i`` sits at ``edge/2 * (+-1, +-1, +-1)`` with bit k of ``i`` giving the sign of axis k."""
        h = self.edge / 2.0
        return np.array([[h if (i >> k) & 1 else -h for k in range(3)] for i in range(8)])


@dataclass
class KeypointObservation:
    camera_id: int
    uv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(8, 2)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(8) & np.all(np.isfinite(self.uv), axis=1)


def project(camera: CameraModel, points):
    """Pinhole projection of palm-frame points; returns ``(uv, valid)``.

    Points with non-positive depth are flagged invalid and get NaN pixels.
    """
    xc = camera.to_camera(points)
    z = xc[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * xc[..., 0] / z + camera.cx
        v = camera.fy * xc[..., 1] / z + camera.cy
    uv = np.stack([u, v], axis=-1)
    uv[~valid] = np.nan
    return uv, valid


def observe(camera: CameraModel, camera_id: int, pose: RigidPose, model: CubeModel = CubeModel(),
            sigma: float = 0.0, rng: np.random.Generator | None = None) -> KeypointObservation:
    uv, valid = project(camera, pose.apply(model.corners))
    if sigma > 0:
        uv = uv + sigma * rng.standard_normal(uv.shape)
    return KeypointObservation(camera_id, uv, valid)


# -- PnP ------------------------------------------------------------------


@dataclass
class PnPResult:
    camera_id: int
    pose: RigidPose
    rms: float
    converged: bool
    iterations: int
    method: str


def _reprojection(xm, uv, k, r, t):
    fx, fy, cx, cy = k
    xc = xm @ r.T + t
    z = xc[:, 2]
    proj = np.stack([fx * xc[:, 0] / z + cx, fy * xc[:, 1] / z + cy], axis=1)
    return (proj - uv).reshape(-1), xc


def _rms(res):
    return float(np.sqrt(np.mean(np.sum(res.reshape(-1, 2) ** 2, axis=1))))


def _refine(xm, uv, k, r, t, max_iter=100):
    """Levenberg-Marquardt on the pixel residual; rotation updated on the left."""
    fx, fy = k[0], k[1]
    res, xc = _reprojection(xm, uv, k, r, t)
    cost = float(res @ res) if np.all(xc[:, 2] > 0) else math.inf
    if not math.isfinite(cost):
        return r, t, cost, False, 0
    lam = 1e-3
    for it in range(1, max_iter + 1):
        z = xc[:, 2]
        du = np.zeros((len(xm), 3))
        dv = np.zeros((len(xm), 3))
        du[:, 0] = fx / z
        du[:, 2] = -fx * xc[:, 0] / z**2
        dv[:, 1] = fy / z
        dv[:, 2] = -fy * xc[:, 1] / z**2
        drot = -_skew(xc - t)
        j = np.empty((2 * len(xm), 6))
        j[0::2, :3] = np.einsum("ni,nij->nj", du, drot)
        j[1::2, :3] = np.einsum("ni,nij->nj", dv, drot)
        j[0::2, 3:] = du
        j[1::2, 3:] = dv
        jtj = j.T @ j
        g = j.T @ res
        if np.max(np.abs(g)) < 1e-14 * max(1.0, cost):
            return r, t, cost, True, it
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -g)
            r_new = _rotvec_matrix(step[:3]) @ r
            t_new = t + step[3:]
            res_new, xc_new = _reprojection(xm, uv, k, r_new, t_new)
            cost_new = float(res_new @ res_new) if np.all(xc_new[:, 2] > 0) else math.inf
            if cost_new <= cost:
                break
            lam *= 10.0
            if lam > 1e12:
                return r, t, cost, True, it
        small = np.linalg.norm(step) < 1e-13 * (1.0 + np.linalg.norm(t)) or cost - cost_new <= 1e-15 * cost
        r, t, res, xc, cost = r_new, t_new, res_new, xc_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        if small:
            return r, t, cost, True, it
    return r, t, cost, False, max_iter


def _dlt_init(xm, xn):
    m = xm.mean(axis=0)
    s = math.sqrt(3.0) / np.mean(np.linalg.norm(xm - m, axis=1))
    xs = (xm - m) * s
    n = len(xm)
    a = np.zeros((2 * n, 12))
    xh = np.hstack([xs, np.ones((n, 1))])
    a[0::2, 0:4] = xh
    a[0::2, 8:12] = -xn[:, :1] * xh
    a[1::2, 4:8] = xh
    a[1::2, 8:12] = -xn[:, 1:2] * xh
    p = np.linalg.svd(a)[2][-1].reshape(3, 4)
    t_norm = np.eye(4)
    t_norm[:3, :3] *= s
    t_norm[:3, 3] = -s * m
    p = p @ t_norm
    if np.linalg.det(p[:, :3]) < 0:
        p = -p
    sv = np.linalg.svd(p[:, :3], compute_uv=False)
    r = _orthonormalize(p[:, :3])
    t = p[:, 3] / np.mean(sv)
    return r, t


def _plane_init(xm, xn):
    c = xm.mean(axis=0)
    _, _, vt = np.linalg.svd(xm - c)
    e1, e2 = vt[0], vt[1]
    basis = np.stack([e1, e2, np.cross(e1, e2)], axis=1)
    ab = (xm - c) @ basis[:, :2]
    n = len(xm)
    a = np.zeros((2 * n, 9))
    src = np.hstack([ab, np.ones((n, 1))])
    a[0::2, 0:3] = src
    a[0::2, 6:9] = -xn[:, :1] * src
    a[1::2, 3:6] = src
    a[1::2, 6:9] = -xn[:, 1:2] * src
    h = np.linalg.svd(a)[2][-1].reshape(3, 3)
    h = h * 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    if h[2, 2] < 0:
        h = -h
    r_plane = _orthonormalize(np.stack([h[:, 0], h[:, 1], np.cross(h[:, 0], h[:, 1])], axis=1))
    r = r_plane @ basis.T
    return r, h[:, 2] - r @ c


_AXIS_ROTATIONS = None


def _candidate_rotations():
    global _AXIS_ROTATIONS
    if _AXIS_ROTATIONS is None:
        mats = []
        for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            for signs in np.ndindex(2, 2, 2):
                m = np.zeros((3, 3))
                for row, col in enumerate(perm):
                    m[row, col] = 1.0 if signs[row] else -1.0
                if np.linalg.det(m) > 0:
                    mats.append(m)
        rng = np.random.default_rng(0)
        mats += list(quat.to_matrix(quat.random(rng, 40)))
        _AXIS_ROTATIONS = mats
    return _AXIS_ROTATIONS


def _depth_guess(xm, xn):
    spread3 = np.sqrt(np.mean(np.sum((xm - xm.mean(axis=0)) ** 2, axis=1)))
    spread2 = np.sqrt(np.mean(np.sum((xn - xn.mean(axis=0)) ** 2, axis=1)))
    return spread3 / max(spread2, 1e-9)


def _best_refinement(xm, uv, k, starts, max_iter):
    best = None
    for r0, t0 in starts:
        cand = _refine(xm, uv, k, r0, t0, max_iter)
        if best is None or cand[2] < best[2]:
            best = cand
    return best


def pnp_solve(camera: CameraModel, keypoints: KeypointObservation, model: CubeModel = CubeModel(),
              init: RigidPose | None = None, camera_id: int | None = None, max_iter: int = 100) -> PnPResult:
    """Pose of the cube from one camera's labelled corners.

    Linear initialisation (DLT for six or more non-coplanar points, a plane
    homography for coplanar ones, a multi-start search otherwise) followed
    by Levenberg-Marquardt on the reprojection error. ``init`` is a
    cube-to-palm pose that replaces the linear step.
    """
    cid = keypoints.camera_id if camera_id is None else camera_id
    idx = np.flatnonzero(keypoints.valid)
    if idx.size < 4:
        raise PoseError(f"camera {cid}: PnP needs at least 4 valid keypoints, got {idx.size}")
    xm = model.corners[idx]
    uv = keypoints.uv[idx]
    xn = camera.normalized(uv)
    k = (camera.fx, camera.fy, camera.cx, camera.cy)
    w2c_r, w2c_t = camera.world_to_camera

    centered = xm - xm.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    coplanar = sv[2] < 1e-9 * sv[0]
    if init is not None:
        starts = [(w2c_r @ init.matrix, w2c_r @ init.translation + w2c_t)]
        method = "init"
    elif coplanar:
        starts = [_plane_init(xm, xn)]
        method = "homography"
    elif idx.size >= 6:
        starts = [_dlt_init(xm, xn)]
        method = "dlt"
    else:
        z = _depth_guess(xm, xn)
        ray = np.append(xn.mean(axis=0), 1.0)
        starts = [(r, z * ray - r @ xm.mean(axis=0)) for r in _candidate_rotations()]
        method = "multistart"

    best = _best_refinement(xm, uv, k, starts, max_iter)
    if not (best[3] and math.isfinite(best[2])) and method != "multistart":
        # an outlier can push the linear estimate behind the camera
        z = _depth_guess(xm, xn)
        ray = np.append(xn.mean(axis=0), 1.0)
        fallback = [(r, z * ray - r @ xm.mean(axis=0)) for r in _candidate_rotations()]
        alt = _best_refinement(xm, uv, k, fallback, max_iter)
        if alt[2] < best[2]:
            best, method = alt, "multistart"
    r, t, cost, ok, iters = best
    res, _ = _reprojection(xm, uv, k, r, t)
    ok = ok and math.isfinite(cost)
    pose = RigidPose.from_matrix(camera.rotation @ r, camera.rotation @ t + camera.translation)
    return PnPResult(cid, pose, _rms(res) if math.isfinite(cost) else math.inf, ok, iters, method)


def reprojection_rms(camera: CameraModel, pose: RigidPose, keypoints: KeypointObservation,
                     model: CubeModel = CubeModel()) -> float:
    uv, in_front = project(camera, pose.apply(model.corners))
    use = keypoints.valid
    if not np.all(in_front[use]):
        return math.inf
    d = uv[use] - keypoints.uv[use]
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))


def filter_cameras(rig, per_camera: dict[int, PnPResult], observations: dict[int, KeypointObservation],
                   threshold_px: float = FILTER_THRESHOLD_PX, model: CubeModel = CubeModel()) -> list[int]:
    """Cameras whose PnP pose reprojects onto their own keypoints within ``threshold_px`` RMS."""
    if not per_camera:
        raise PoseError("no camera produced a PnP solution")
    kept = []
    for cid in sorted(per_camera):
        res = per_camera[cid]
        if not res.converged:
            continue
        if reprojection_rms(rig[cid], res.pose, observations[cid], model) <= threshold_px:
            kept.append(cid)
    return kept


def triangulate(rig, observations: dict[int, KeypointObservation], cameras=None):
    """Linear multi-view triangulation of each corner.

    Returns ``(points (8, 3), present (8,))``; corners seen by fewer than
    two of ``cameras`` are NaN with ``present`` false.
    """
    cams = sorted(observations) if cameras is None else list(cameras)
    if len(cams) < 2:
        raise PoseError(f"triangulation needs at least 2 cameras, got {len(cams)}")
    proj = {}
    for cid in cams:
        r, t = rig[cid].world_to_camera
        proj[cid] = np.hstack([r, t[:, None]])
    points = np.full((8, 3), np.nan)
    present = np.zeros(8, dtype=bool)
    for corner in range(8):
        rows = []
        for cid in cams:
            obs = observations[cid]
            if not obs.valid[corner]:
                continue
            x, y = rig[cid].normalized(obs.uv[corner])
            p = proj[cid]
            rows.append(x * p[2] - p[0])
            rows.append(y * p[2] - p[1])
        if len(rows) < 4:
            continue
        a = np.array(rows)
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        xh = np.linalg.svd(a)[2][-1]
        if abs(xh[3]) < 1e-15:
            continue
        points[corner] = xh[:3] / xh[3]
        present[corner] = True
    return points, present


def register(points, model: CubeModel = CubeModel(), present=None) -> RigidPose:
    """Least-squares rigid transform taking model corners onto ``points``.

    Missing corners (``present`` false or NaN) are left out. A reflection is
    never returned: the SVD solution is sign-corrected to det +1.
    """
    points = np.asarray(points, dtype=np.float64)
    use = np.all(np.isfinite(points), axis=1)
    if present is not None:
        use &= np.asarray(present, dtype=bool)
    src = model.corners[use]
    dst = points[use]
    if src.shape[0] < 3:
        raise PoseError(f"registration needs at least 3 corners, got {src.shape[0]}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    s_c = src - mu_s
    d_c = dst - mu_d
    for pts, label in ((s_c, "model"), (d_c, "observed")):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise PoseError(f"registration: {label} corners are collinear or coincident")
    h = s_c.T @ d_c
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidPose.from_matrix(r, mu_d - r @ mu_s)


@dataclass
class PoseEstimate:
    pose: RigidPose | None
    stale: bool
    method: str
    per_camera_rms: dict
    kept: list
    corners_triangulated: int
    registration_rms: float
    failures: dict = field(default_factory=dict)


def estimate_pose(rig, observations, model: CubeModel = CubeModel(), threshold_px: float = FILTER_THRESHOLD_PX,
                  last_pose: RigidPose | None = None) -> PoseEstimate:
    """PnP per camera, filter, triangulate, register.

    With a single surviving camera its PnP pose is returned; with none the
    previous pose ``last_pose`` is held and flagged stale (``pose`` is None
    when there is nothing to hold).
    """
    if not isinstance(observations, dict):
        observations = {o.camera_id: o for o in observations}
    per_camera = {}
    failures = {}
    for cid in sorted(observations):
        try:
            per_camera[cid] = pnp_solve(rig[cid], observations[cid], model)
        except PoseError as exc:
            failures[cid] = str(exc)
    rms = {cid: r.rms for cid, r in per_camera.items()}
    kept = filter_cameras(rig, per_camera, observations, threshold_px, model) if per_camera else []

    if len(kept) >= 2:
        points, present = triangulate(rig, observations, kept)
        if present.sum() >= 3:
            try:
                pose = register(points, model, present)
            except PoseError as exc:
                failures["register"] = str(exc)
            else:
                err = pose.apply(model.corners[present]) - points[present]
                reg_rms = float(np.sqrt(np.mean(np.sum(err**2, axis=1))))
                return PoseEstimate(pose, False, "triangulation", rms, kept, int(present.sum()), reg_rms, failures)
    if kept:
        best = min(kept, key=lambda c: per_camera[c].rms)
        return PoseEstimate(per_camera[best].pose, False, "single_camera", rms, kept, 0, math.nan, failures)
    return PoseEstimate(last_pose, True, "held" if last_pose is not None else "none", rms, kept, 0, math.nan, failures)


# -- error metrics ----------------------------------------------------------


@dataclass(frozen=True)
class PoseErrorReport:
    count: int
    rotation_deg: float
    rotation_ci: float
    translation_mm: tuple[float, float, float]
    translation_ci: tuple[float, float, float]
    rotation_errors: np.ndarray = field(repr=False, default=None)
    translation_errors: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        axes = "xyz"
        return {
            "schema": REPORT_SCHEMA,
            "count": self.count,
            "rotation_error_deg": {"mean": self.rotation_deg, "ci90": self.rotation_ci},
            "translation_error_mm": {
                a: {"mean": self.translation_mm[i], "ci90": self.translation_ci[i]} for i, a in enumerate(axes)
            },
        }

    def table(self, label: str = "Sim") -> str:
        head = "\t".join(POSE_HEADER)
        cells = [label, f"{self.rotation_deg:.1f}±{self.rotation_ci:.2f}°"]
        cells += [f"{m:.1f}±{c:.1f} mm" for m, c in zip(self.translation_mm, self.translation_ci)]
        return head + "\n" + "\t".join(cells) + "\n"


def rotation_error_deg(estimate: RigidPose, truth: RigidPose) -> float:
    return math.degrees(quat.rotation_distance(estimate.rotation, truth.rotation))


def pose_errors(estimates, truths) -> PoseErrorReport:
    """Geodesic rotation error (degrees) and absolute per-axis translation error (mm), mean with 90% CI."""
    if isinstance(estimates, RigidPose):
        estimates, truths = [estimates], [truths]
    estimates = list(estimates)
    truths = list(truths)
    if len(estimates) != len(truths):
        raise ValueError("need one truth per estimate")
    if not estimates:
        raise ValueError("no poses to compare")
    rot = np.array(
        [math.degrees(quat.rotation_distance(e.rotation, t.rotation)) for e, t in zip(estimates, truths)]
    )
    trans = np.array([np.abs(e.translation - t.translation) * 1000.0 for e, t in zip(estimates, truths)])
    return PoseErrorReport(
        count=len(estimates),
        rotation_deg=float(rot.mean()),
        rotation_ci=ci90(rot),
        translation_mm=tuple(float(v) for v in trans.mean(axis=0)),
        translation_ci=tuple(ci90(trans[:, i]) for i in range(3)),
        rotation_errors=rot,
        translation_errors=trans,
    )


def write_report(fh, report: PoseErrorReport, extra: dict | None = None):
    data = report.as_dict()
    if extra:
        data.update(extra)
    json.dump(data, fh, indent=2, sort_keys=True)
    fh.write("\n")


# -- rigs and scenes ---------------------------------------------------------


def default_rig() -> list[CameraModel]:
    """Three cameras on a 0.45 m hemisphere around the palm, 120 degrees apart."""
    cams = []
    for i, az in enumerate((0.0, 120.0, 240.0)):
        a = math.radians(az)
        el = math.radians(35.0)
        eye = 0.45 * np.array([math.cos(el) * math.cos(a), math.cos(el) * math.sin(a), math.sin(el)])
        cams.append(CameraModel.look_at(eye, name=f"cam{i}"))
    return cams


def random_rig(rng: np.random.Generator, n: int = 3, radius=(0.3, 0.6), fx=(250.0, 450.0)) -> list[CameraModel]:
    """Cameras on random upper-hemisphere points, each aimed near the palm origin."""
    cams = []
    for i in range(n):
        d = rng.standard_normal(3)
        d[2] = abs(d[2]) + 0.3
        d /= np.linalg.norm(d)
        eye = rng.uniform(*radius) * d
        f = rng.uniform(*fx)
        target = rng.uniform(-0.01, 0.01, 3)
        cams.append(CameraModel.look_at(eye, target, fx=f, fy=f, name=f"cam{i}"))
    return cams


def random_pose(rng: np.random.Generator, half_width: float = 0.03) -> RigidPose:
    return RigidPose(quat.random(rng), rng.uniform(-half_width, half_width, 3))


def synthesize(rig, pose: RigidPose, model: CubeModel = CubeModel(), sigma: float = 0.0,
               rng: np.random.Generator | None = None) -> dict[int, KeypointObservation]:
    return {i: observe(cam, i, pose, model, sigma, rng) for i, cam in enumerate(rig)}


def read_rig(fh) -> list[CameraModel]:
    """Cameras from an INI rig file, one ``[camera.<id>]`` section each, ids 0..n-1."""
    cp = configparser.ConfigParser()
    cp.read_file(fh)
    sections = [s for s in cp.sections() if s.startswith("camera.")]
    if not sections:
        raise ValueError("rig file has no [camera.<id>] sections")
    cams = {}
    for s in sections:
        try:
            cid = int(s.split(".", 1)[1])
            sec = cp[s]
            rot = [float(v) for v in sec["rotation"].split()]
            trans = [float(v) for v in sec["translation"].split()]
            if len(rot) != 9 or len(trans) != 3:
                raise ValueError("rotation needs 9 values and translation 3")
            cams[cid] = CameraModel(
                float(sec["fx"]), float(sec["fy"]), float(sec["cx"]), float(sec["cy"]),
                np.array(rot).reshape(3, 3), trans,
                int(sec.get("width", DEFAULT_RESOLUTION[0])), int(sec.get("height", DEFAULT_RESOLUTION[1])),
                sec.get("name", f"cam{cid}"),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"[{s}]: {exc}") from None
    if sorted(cams) != list(range(len(cams))):
        raise ValueError(f"camera ids must be 0..{len(cams) - 1}, got {sorted(cams)}")
    return [cams[i] for i in range(len(cams))]


def write_rig(fh, rig) -> None:
    for i, cam in enumerate(rig):
        fh.write(f"[camera.{i}]\n")
        fh.write(f"name = {cam.name or f'cam{i}'}\n")
        for key in ("fx", "fy", "cx", "cy"):
            fh.write(f"{key} = {getattr(cam, key)!r}\n")
        fh.write(f"width = {cam.width}\nheight = {cam.height}\n")
        fh.write("rotation = " + " ".join(repr(float(v)) for v in cam.rotation.reshape(-1)) + "\n")
        fh.write("translation = " + " ".join(repr(float(v)) for v in cam.translation) + "\n\n")


def write_keypoints(fh, observations, scene: int | None = None, header: bool = True) -> None:
    """Rows of ``camera_id, corner_id, u, v, valid`` (prefixed by ``scene`` when given)."""
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        fh.write(f"# schema: {KEYPOINT_SCHEMA}\n")
        writer.writerow((("scene",) if scene is not None else ()) + KEYPOINT_FIELDS)
    for cid in sorted(observations):
        obs = observations[cid]
        for corner in range(8):
            row = [cid, corner, repr(float(obs.uv[corner, 0])), repr(float(obs.uv[corner, 1])), int(obs.valid[corner])]
            writer.writerow(([scene] if scene is not None else []) + row)


def read_keypoints(fh) -> dict[int, dict[int, KeypointObservation]]:
    """Observations grouped by scene (scene 0 when the file has no scene column)."""
    lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.DictReader(lines)
    missing = set(KEYPOINT_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"keypoint file lacks columns {sorted(missing)}")
    scenes: dict[int, dict[int, dict]] = {}
    for row in reader:
        scene = int(row.get("scene") or 0)
        cam = scenes.setdefault(scene, {}).setdefault(
            int(row["camera_id"]), {"uv": np.full((8, 2), np.nan), "valid": np.zeros(8, dtype=bool)}
        )
        corner = int(row["corner_id"])
        if not 0 <= corner < 8:
            raise ValueError(f"corner_id {corner} out of range 0..7")
        cam["uv"][corner] = (float(row["u"]), float(row["v"]))
        cam["valid"][corner] = bool(int(row["valid"]))
    return {
        s: {cid: KeypointObservation(cid, c["uv"], c["valid"]) for cid, c in cams.items()}
        for s, cams in scenes.items()
    }
