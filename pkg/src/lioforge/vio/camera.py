"""Camera rig, feature tracks and the per-camera reprojection residual.

Landmarks are parameterised by inverse distance along the unit bearing of
their first (host) observation. Poses are body-to-world; the extrinsic of
each camera is camera-to-body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, compose, hat, inverse, rot_z

LIDAR = "LIDAR"
TRIANGULATED = "TRIANGULATED"

# camera optical frame (z forward, x right, y down) expressed in the body frame
# (x forward, y left, z up)
_R_BODY_OPTICAL = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Camera:
    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = field(default_factory=Pose)   # camera -> body

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"camera {self.name!r}: focal lengths must be positive")

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def normalized_sigma(self, pixel_sigma: float) -> float:
        return pixel_sigma / self.focal

    def in_image(self, xn, yn, margin: float = 0.0):
        u = self.fx * np.asarray(xn) + self.cx
        v = self.fy * np.asarray(yn) + self.cy
        return (u >= margin) & (u < self.width - margin) & (v >= margin) & (v < self.height - margin)

    def to_dict(self) -> dict:
        return {"name": self.name, "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "extrinsic": {"q": self.extrinsic.q.tolist(), "t": self.extrinsic.t.tolist()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        ext = d.get("extrinsic", {})
        return cls(d["name"], d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                   Pose(ext.get("q", [0, 0, 0, 1]), ext.get("t", [0, 0, 0])))


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("a rig needs at least one camera")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError("camera names must be unique")
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    @property
    def names(self) -> list:
        return [c.name for c in self.cameras]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"camera {name!r} not in rig {self.names}") from None

    def subset(self, names) -> tuple["CameraRig", list]:
        """Sub-rig with the named cameras plus the original indices kept."""
        idx = [self.index(n) for n in names]
        return CameraRig(tuple(self.cameras[i] for i in idx)), idx

    def to_dict(self) -> dict:
        return {"cameras": [c.to_dict() for c in self.cameras]}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(tuple(Camera.from_dict(c) for c in d["cameras"]))

    @classmethod
    def three_camera(cls, fx: float = 400.0, width: int = 640, height: int = 480,
                     offset: float = 0.1) -> "CameraRig":
        """Front / right / left cameras yawed 0, -60 and +60 degrees."""
        cams = []
        for name, yaw in (("front", 0.0), ("right", -60.0), ("left", 60.0)):
            Rz = rot_z(math.radians(yaw))
            t = Rz @ np.array([offset, 0.0, 0.05])
            cams.append(Camera(name, fx, fx, width / 2.0, height / 2.0, width, height,
                               Pose.from_matrix(Rz @ _R_BODY_OPTICAL, t)))
        return cls(tuple(cams))


@dataclass
class FeatureTrack:
    feature_id: int
    camera_index: int
    observations: list                      # [(frame, np.array([x, y]))], normalised coords
    depth_prior: float | None = None        # distance along the host ray, metres
    depth_source: str | None = None
    inverse_depth: float | None = None

    def add(self, frame: int, xy) -> None:
        if self.observations and frame <= self.observations[-1][0]:
            raise ValueError("observations must be added in frame order")
        self.observations.append((int(frame), np.asarray(xy, dtype=float)))

    @property
    def frames(self) -> list:
        return [f for f, _ in self.observations]

    @property
    def host_frame(self) -> int:
        return self.observations[0][0]

    def observation(self, frame: int):
        for f, xy in self.observations:
            if f == frame:
                return xy
        raise KeyError(frame)

    def eligible(self) -> bool:
        need = 1 if self.depth_source == LIDAR else 2
        return len(self.observations) >= need


def bearing(xy) -> np.ndarray:
    v = np.array([xy[0], xy[1], 1.0])
    return v / np.linalg.norm(v)


def project_point(p_cam) -> np.ndarray:
    return np.array([p_cam[0] / p_cam[2], p_cam[1] / p_cam[2]])


def reprojection_residual(host_xy, target_xy, inv_depth: float, host_pose: Pose,
                          target_pose: Pose, extrinsic: Pose, sqrt_info: float = 1.0,
                          jacobians: bool = True):
    """Whitened residual ``predicted - observed`` in the target frame.

    Returns ``(r, J, valid)`` where ``J`` is a dict with keys ``host`` (2x6),
    ``target`` (2x6) and ``inv_depth`` (2x1); pose blocks are ordered
    (rotation, translation) under the right-perturbation update.
    ``valid`` is False when the point lies behind the target camera.
    """
    b = bearing(host_xy)
    Rbc, tbc = extrinsic.R, extrinsic.t
    Ri, pi = host_pose.R, host_pose.t
    Rj, pj = target_pose.R, target_pose.t

    pc_i = b / inv_depth
    pb_i = Rbc @ pc_i + tbc
    pw = Ri @ pb_i + pi
    pb_j = Rj.T @ (pw - pj)
    pc_j = Rbc.T @ (pb_j - tbc)
    z = pc_j[2]
    if z <= 1e-6:
        return np.zeros(2), None, False
    r = sqrt_info * (project_point(pc_j) - np.asarray(target_xy, dtype=float))
    if not jacobians:
        return r, None, True

    dproj = sqrt_info * np.array([[1.0 / z, 0.0, -pc_j[0] / z**2],
                                  [0.0, 1.0 / z, -pc_j[1] / z**2]])
    A = dproj @ Rbc.T                      # d r / d pb_j
    B = A @ Rj.T                           # d r / d pw
    J_host = np.hstack([B @ (-Ri @ hat(pb_i)), B])
    J_target = np.hstack([A @ hat(pb_j), -B])
    J_rho = (B @ Ri @ Rbc @ (-b / inv_depth**2)).reshape(2, 1)
    return r, {"host": J_host, "target": J_target, "inv_depth": J_rho}, True


def extrinsic_terms(extrinsic: Pose) -> tuple[np.ndarray, np.ndarray]:
    """(R_C^B, p_C^B) for the SfM alignment from a camera-to-body extrinsic.

    p_C^B is the offset from the camera centre to the body origin, in body
    axes; with that convention the alignment relation is geometrically exact.
    """
    return extrinsic.R, -extrinsic.t


def align_sfm_to_body(cam_poses, R_cb, p_cb, scale: float = 1.0) -> list:
    """Metric body poses in the SfM reference frame from up-to-scale camera poses.

    R_b = R_c * R_cb^-1 and s * p_b = s * p_c + R_b * p_cb. The returned
    translation is the metric quantity s * p_b.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    R_cb = np.asarray(R_cb, dtype=float)
    p_cb = np.asarray(p_cb, dtype=float)
    R_inv = R_cb.T
    out = []
    for P in cam_poses:
        R_b = P.R @ R_inv
        out.append(Pose.from_matrix(R_b, scale * P.t + R_b @ p_cb))
    return out


def prime_depth(track: FeatureTrack, points_cam, cone_deg: float = 1.0) -> FeatureTrack:
    """Seed the track's depth from the LiDAR return closest in angle to its host ray."""
    pts = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    if len(pts) == 0 or not track.observations:
        return track
    b = bearing(track.observations[0][1])
    dist = np.linalg.norm(pts, axis=1)
    ok = dist > 0
    cosang = np.full(len(pts), -1.0)
    cosang[ok] = (pts[ok] @ b) / dist[ok]
    cand = np.flatnonzero(cosang >= math.cos(math.radians(cone_deg)))
    if len(cand) == 0:
        return track
    best = cand[np.argmax(cosang[cand])]
    track.depth_prior = float(dist[best])
    track.depth_source = LIDAR
    track.inverse_depth = 1.0 / track.depth_prior
    return track


def triangulate(track: FeatureTrack, poses: dict, rig: CameraRig) -> float | None:
    """Distance along the host ray from a linear two-view-or-more solve."""
    cam = rig[track.camera_index]
    obs = [(f, xy) for f, xy in track.observations if f in poses]
    if len(obs) < 2:
        return None
    A, rhs = [], []
    for f, xy in obs:
        T = compose(poses[f], cam.extrinsic)
        Rw, cw = T.R, T.t
        d = Rw @ bearing(xy)
        # (I - d d^T) (X - c) = 0
        P = np.eye(3) - np.outer(d, d)
        A.append(P)
        rhs.append(P @ cw)
    A = np.vstack(A)
    rhs = np.concatenate(rhs)
    X, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    host = compose(poses[obs[0][0]], cam.extrinsic)
    pc = host.R.T @ (X - host.t)
    b = bearing(obs[0][1])
    dist = float(pc @ b)
    if not (0.1 < dist < 200.0):
        return None
    return dist


def reprojection_batch(host_xy, target_xy, inv_depth, R_host, p_host, R_target, p_target,
                       R_bc, t_bc, sqrt_info):
    """Vectorised :func:`reprojection_residual` over n observations.

    Pose arrays are (n, 3, 3) / (n, 3); ``sqrt_info`` is (n,). Returns
    ``r (n, 2)``, ``J_host (n, 2, 6)``, ``J_target (n, 2, 6)``,
    ``J_rho (n, 2)`` and ``valid (n,)``.
    """
    hx = np.asarray(host_xy, float)
    b = np.concatenate([hx, np.ones((len(hx), 1))], axis=1)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    rho = np.asarray(inv_depth, float)
    pc_i = b / rho[:, None]
    pb_i = np.einsum("nij,nj->ni", R_bc, pc_i) + t_bc
    pw = np.einsum("nij,nj->ni", R_host, pb_i) + p_host
    pb_j = np.einsum("nji,nj->ni", R_target, pw - p_target)
    pc_j = np.einsum("nji,nj->ni", R_bc, pb_j - t_bc)
    z = pc_j[:, 2]
    valid = z > 1e-6
    zs = np.where(valid, z, 1.0)
    s = np.asarray(sqrt_info, float)
    r = s[:, None] * (pc_j[:, :2] / zs[:, None] - np.asarray(target_xy, float))
    r[~valid] = 0.0
    dproj = np.zeros((len(z), 2, 3))
    dproj[:, 0, 0] = 1.0 / zs
    dproj[:, 1, 1] = 1.0 / zs
    dproj[:, 0, 2] = -pc_j[:, 0] / zs**2
    dproj[:, 1, 2] = -pc_j[:, 1] / zs**2
    dproj *= s[:, None, None]
    A = np.einsum("nik,njk->nij", dproj, R_bc)          # dproj @ R_bc^T
    B = np.einsum("nik,njk->nij", A, R_target)          # A @ R_target^T
    BR = np.einsum("nik,nkj->nij", B, R_host)
    J_host = np.concatenate([-np.einsum("nik,nkj->nij", BR, _hat_batch(pb_i)), B], axis=2)
    J_target = np.concatenate([np.einsum("nik,nkj->nij", A, _hat_batch(pb_j)), -B], axis=2)
    J_rho = np.einsum("nik,nkj,nj->ni", BR, R_bc, -b / rho[:, None] ** 2)
    for J in (J_host, J_target):
        J[~valid] = 0.0
    J_rho[~valid] = 0.0
    return r, J_host, J_target, J_rho, valid


def _hat_batch(v):
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out
