"""Synthetic worlds, trajectories and sensor generators with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .cloud import PointCloud
from .geometry import Pose, StampedPose, compose
from .range_image import BeamModel
from .vio.camera import CameraRig, FeatureTrack
from .vio.preintegration import GRAVITY

OUTLIER = -1


# -- world ------------------------------------------------------------------------

@dataclass
class World:
    """Rectangular surfaces ``corner + u*e1 + v*e2`` (u, v in [0, 1]) plus landmarks."""

    corners: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    seed: int = 0
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(-1, 3)
        self.edge1 = np.asarray(self.edge1, dtype=float).reshape(-1, 3)
        self.edge2 = np.asarray(self.edge2, dtype=float).reshape(-1, 3)
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        if not (len(self.corners) == len(self.edge1) == len(self.edge2)):
            raise ValueError("surface arrays must have equal length")
        cross = np.cross(self.edge1, self.edge2)
        area = np.linalg.norm(cross, axis=1)
        scale = np.linalg.norm(self.edge1, axis=1) * np.linalg.norm(self.edge2, axis=1)
        if np.any(area <= 1e-9 * np.maximum(scale, 1e-300)):
            raise ValueError("surface edge vectors must be linearly independent")

    @property
    def n_surfaces(self) -> int:
        return len(self.corners)

    def to_dict(self) -> dict:
        return {"corners": self.corners.tolist(), "edge1": self.edge1.tolist(),
                "edge2": self.edge2.tolist(), "landmarks": self.landmarks.tolist(),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        return cls(d["corners"], d["edge1"], d["edge2"], d.get("landmarks", []), d.get("seed", 0))


def _panel(corner, e1, e2, store):
    store.append((np.asarray(corner, float), np.asarray(e1, float), np.asarray(e2, float)))


def _box_faces(lo, hi, store, skip=()):
    """The six faces of an axis-aligned box."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    dx, dy, dz = hi - lo
    X, Y, Z = np.eye(3)
    faces = {
        "x-": (lo, Y * dy, Z * dz),
        "x+": (lo + X * dx, Y * dy, Z * dz),
        "y-": (lo, X * dx, Z * dz),
        "y+": (lo + Y * dy, X * dx, Z * dz),
        "z-": (lo, X * dx, Y * dy),
        "z+": (lo + Z * dz, X * dx, Y * dy),
    }
    for k, v in faces.items():
        if k not in skip:
            _panel(*v, store)


def _sample_landmarks(rng, surfaces, n, weights=None, margin=0.05):
    corners = np.array([s[0] for s in surfaces])
    e1 = np.array([s[1] for s in surfaces])
    e2 = np.array([s[2] for s in surfaces])
    if weights is None:
        weights = np.linalg.norm(np.cross(e1, e2), axis=1)
    weights = np.asarray(weights, float)
    pick = rng.choice(len(surfaces), size=n, p=weights / weights.sum())
    uv = rng.uniform(margin, 1.0 - margin, size=(n, 2))
    return corners[pick] + uv[:, :1] * e1[pick] + uv[:, 1:] * e2[pick]


def box_room(seed: int = 0, n_landmarks: int = 200) -> World:
    """20 x 20 x 5 m room with interior panels and pillars."""
    rng = np.random.default_rng(seed)
    s = []
    _box_faces((-10, -10, 0), (10, 10, 5), s)
    # interior free-standing panels and square pillars
    _panel((-6.0, 5.0, 0.0), (4.0, 0.0, 0.0), (0.0, 0.0, 3.0), s)
    _panel((5.0, -7.0, 0.0), (0.0, 4.0, 0.0), (0.0, 0.0, 2.5), s)
    _panel((2.0, 6.5, 0.0), (2.5, 1.5, 0.0), (0.0, 0.0, 4.0), s)
    for cx, cy in ((-5.5, -4.5), (6.0, 3.0), (-1.0, -6.5), (-7.0, 1.0)):
        _box_faces((cx - 0.3, cy - 0.3, 0.0), (cx + 0.3, cy + 0.3, 5.0), s, skip=("z-", "z+"))
    # landmarks on the outer walls only (indices 0..3 covered by x-,x+,y-,y+)
    walls = s[0:4]
    lm = _sample_landmarks(rng, walls, n_landmarks)
    corners, e1, e2 = zip(*s)
    return World(np.array(corners), np.array(e1), np.array(e2), lm, seed)


def corridor(length: float = 60.0, width: float = 4.0, height: float = 3.0,
             seed: int = 0, n_landmarks: int = 200, pillar_spacing: float = 5.0) -> World:
    """Long corridor along +x with pillars along both walls."""
    rng = np.random.default_rng(seed)
    s = []
    x0 = -5.0
    _box_faces((x0, -width / 2, 0.0), (x0 + length, width / 2, height), s)
    x = x0 + pillar_spacing / 2
    side = 1.0
    while x < x0 + length - 1.0:
        y = side * (width / 2 - 0.35)
        _box_faces((x - 0.2, y - 0.2, 0.0), (x + 0.2, y + 0.2, height), s, skip=("z-", "z+"))
        x += pillar_spacing
        side = -side
    lm = _sample_landmarks(rng, s[0:4], n_landmarks)
    corners, e1, e2 = zip(*s)
    return World(np.array(corners), np.array(e1), np.array(e2), lm, seed)


def single_wall(distance: float = 5.0, half_size: float = 50.0) -> World:
    """One wall perpendicular to +x at ``distance``."""
    return World([[distance, -half_size, -half_size]], [[0.0, 2 * half_size, 0.0]],
                 [[0.0, 0.0, 2 * half_size]])


def empty_world() -> World:
    return World(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))


def raycast(world: World, origins, directions, max_range: float = np.inf):
    """Nearest hit of every ray; returns (range, surface index) with -1 / inf for misses.

    ``directions`` must be unit vectors. Vectorised over rays and surfaces.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    if len(o) == 1 and len(d) > 1:
        o = np.broadcast_to(o, d.shape)
    n_rays = len(d)
    best = np.full(n_rays, np.inf)
    which = np.full(n_rays, -1, dtype=np.int64)
    if world.n_surfaces == 0 or n_rays == 0:
        return best, which
    c, e1, e2 = world.corners, world.edge1, world.edge2
    nrm = np.cross(e1, e2)
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12
    chunk = 4096
    for start in range(0, n_rays, chunk):
        oo = o[start:start + chunk]
        dd = d[start:start + chunk]
        denom = dd @ nrm.T                                   # (r, m)
        num = np.einsum("mj,mj->m", nrm, c)[None, :] - oo @ nrm.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9)
        t = np.where(ok, t, np.inf)
        hit = oo[:, None, :] + np.where(ok, t, 0.0)[..., None] * dd[:, None, :]
        q = hit - c[None]
        q1 = np.einsum("rmj,mj->rm", q, e1)
        q2 = np.einsum("rmj,mj->rm", q, e2)
        u = (g22 * q1 - g12 * q2) / det
        v = (g11 * q2 - g12 * q1) / det
        inside = ok & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        t = np.where(inside, t, np.inf)
        k = np.argmin(t, axis=1)
        tk = t[np.arange(len(t)), k]
        hitmask = np.isfinite(tk) & (tk <= max_range)
        best[start:start + chunk] = np.where(hitmask, tk, np.inf)
        which[start:start + chunk] = np.where(hitmask, k, -1)
    return best, which


# -- noise ------------------------------------------------------------------------

@dataclass
class SensorNoise:
    range_sigma: float = 0.01
    outlier_fraction: float = 0.0
    gyro_sigma: float = 1e-3          # per-sample white-noise std, rad/s
    accel_sigma: float = 1e-2         # per-sample white-noise std, m/s^2
    gyro_bias_walk: float = 0.0       # rad/s per sqrt(s)
    accel_bias_walk: float = 0.0      # m/s^2 per sqrt(s)
    pixel_sigma: float = 0.5

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (v >= 0.0):
                raise ValueError(f"noise parameter {k} must be non-negative, got {v}")
        if self.outlier_fraction > 1.0:
            raise ValueError("outlier_fraction must not exceed 1")

    @classmethod
    def noiseless(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


# -- LiDAR ------------------------------------------------------------------------

def beam_directions(model: BeamModel) -> tuple[np.ndarray, np.ndarray]:
    """Unit beam directions (rows*cols, 3) in the sensor frame and their ring ids."""
    elev = np.asarray(model.vertical_angles)
    az = model.column_azimuths()
    E, A = np.meshgrid(elev, az, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
    ring = np.repeat(np.arange(len(elev)), len(az))
    return dirs.reshape(-1, 3), ring


def simulate_scan(world: World, pose: Pose, model: BeamModel, noise: SensorNoise,
                  rng: np.random.Generator | None = None, stamp: float = 0.0) -> PointCloud:
    """Instantaneous sweep. Intensity carries the source surface index (OUTLIER = -1)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs, ring = beam_directions(model)
    world_dirs = dirs @ pose.R.T
    r, label = raycast(world, pose.t, world_dirs, model.max_range)
    hit = label >= 0
    r, label, dirs, ring = r[hit], label[hit], dirs[hit], ring[hit]
    if noise.range_sigma > 0:
        r = r + rng.normal(0.0, noise.range_sigma, size=len(r))
    label = label.astype(float)
    if noise.outlier_fraction > 0 and len(r):
        out = rng.random(len(r)) < noise.outlier_fraction
        r = np.where(out, rng.uniform(0.5, model.max_range, size=len(r)), r)
        label[out] = OUTLIER
    r = np.clip(r, 1e-3, model.max_range)
    xyz = dirs * r[:, None]
    return PointCloud(xyz, label, ring.astype(np.int64), np.zeros(len(r)), stamp,
                      {"frame": "sensor"})


# -- trajectory -------------------------------------------------------------------

PRESETS = {
    # (max specific force m/s^2, max angular rate rad/s)
    "quad_medium": (13.03, 1.54),
    "quad_hard": (12.64, 2.34),
    "custom_rig": (20.21, 0.58),
}


class TrajectoryProfile:
    """Smooth trajectory through waypoints (position + roll/pitch/yaw).

    Position and each Euler angle are interpolated by cubic splines over the
    stamps. ``max_acc`` caps the specific force magnitude |a - g| and
    ``max_angv`` the body rate; the constructor stretches time uniformly
    until both hold (it never compresses).
    """

    def __init__(self, stamps, positions, rpy, max_acc: float = np.inf, max_angv: float = np.inf,
                 check_caps: bool = True):
        stamps = np.asarray(stamps, dtype=float)
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        rpy = np.asarray(rpy, dtype=float).reshape(-1, 3)
        if len(stamps) < 2 or np.any(np.diff(stamps) <= 0):
            raise ValueError("waypoint stamps must be increasing, at least two")
        self.max_acc = float(max_acc)
        self.max_angv = float(max_angv)
        self.waypoint_stamps = stamps
        self.waypoint_positions = positions
        self.waypoint_rpy = rpy
        self._t0 = stamps[0]
        self.stretch = 1.0
        self._fit(stamps, positions, rpy)
        if check_caps and (np.isfinite(self.max_acc) or np.isfinite(self.max_angv)):
            acc, angv = self.peaks()
            k = 1.0
            while acc > self.max_acc or angv > self.max_angv:
                k *= 1.05
                self._fit(self._t0 + (stamps - self._t0) * k, positions, rpy)
                acc, angv = self.peaks()
                if k > 1e3:
                    raise ValueError("caps unreachable by time stretching "
                                     f"(gravity alone is {np.linalg.norm(GRAVITY):.2f} m/s^2)")
            self.stretch = k

    def _fit(self, stamps, positions, rpy):
        self.stamps = stamps
        self._pos = CubicSpline(stamps, positions)
        self._rpy = CubicSpline(stamps, rpy)

    @property
    def start(self) -> float:
        return float(self.stamps[0])

    @property
    def end(self) -> float:
        return float(self.stamps[-1])

    @property
    def duration(self) -> float:
        return self.end - self.start

    # kinematics ---------------------------------------------------------------

    @staticmethod
    def _rotation(rpy):
        r, p, y = rpy[..., 0], rpy[..., 1], rpy[..., 2]
        cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
        R = np.empty(rpy.shape[:-1] + (3, 3))
        R[..., 0, 0] = cy * cp
        R[..., 0, 1] = cy * sp * sr - sy * cr
        R[..., 0, 2] = cy * sp * cr + sy * sr
        R[..., 1, 0] = sy * cp
        R[..., 1, 1] = sy * sp * sr + cy * cr
        R[..., 1, 2] = sy * sp * cr - cy * sr
        R[..., 2, 0] = -sp
        R[..., 2, 1] = cp * sr
        R[..., 2, 2] = cp * cr
        return R

    def state(self, t):
        """(R (n,3,3), p (n,3), v (n,3), a (n,3), omega_body (n,3)) at stamps ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = self._pos(t)
        v = self._pos(t, 1)
        a = self._pos(t, 2)
        e = self._rpy(t)
        de = self._rpy(t, 1)
        R = self._rotation(e)
        r, pt = e[:, 0], e[:, 1]
        dr, dp, dy = de[:, 0], de[:, 1], de[:, 2]
        w = np.stack([dr - dy * np.sin(pt),
                      dp * np.cos(r) + dy * np.sin(r) * np.cos(pt),
                      -dp * np.sin(r) + dy * np.cos(r) * np.cos(pt)], axis=1)
        return R, p, v, a, w

    def pose(self, t: float) -> Pose:
        R, p, *_ = self.state(t)
        return Pose.from_matrix(R[0], p[0])

    def velocity(self, t: float) -> np.ndarray:
        return self.state(t)[2][0]

    def peaks(self, n: int = 4000) -> tuple[float, float]:
        t = np.linspace(self.start, self.end, n)
        _, _, _, a, w = self.state(t)
        sf = np.linalg.norm(a - GRAVITY, axis=1)
        return float(sf.max()), float(np.linalg.norm(w, axis=1).max())

    def stamped_poses(self, stamps) -> list:
        R, p, *_ = self.state(stamps)
        return [StampedPose(float(s), Pose.from_matrix(R[i], p[i])) for i, s in enumerate(stamps)]

    # constructors -------------------------------------------------------------

    @classmethod
    def static(cls, pose: Pose | None = None, duration: float = 2.0) -> "TrajectoryProfile":
        pose = pose or Pose()
        from scipy.spatial.transform import Rotation
        rpy = Rotation.from_matrix(pose.R).as_euler("xyz")
        return cls([0.0, duration], [pose.t, pose.t], [rpy, rpy], check_caps=False)

    @classmethod
    def yaw_spin(cls, rate: float, duration: float = 2.0, position=(0.0, 0.0, 1.5)) -> "TrajectoryProfile":
        t = np.linspace(0.0, duration, 5)
        pos = np.tile(np.asarray(position, float), (len(t), 1))
        rpy = np.zeros((len(t), 3))
        rpy[:, 2] = rate * t
        return cls(t, pos, rpy, check_caps=False)

    @classmethod
    def ellipse(cls, preset: str = "quad_medium", duration: float = 10.0, radii=(3.0, 2.0),
                height: float = 1.5, centre=(0.0, 0.0), n_waypoints: int = 17,
                wobble: float = 0.05, loops: float = 1.0) -> "TrajectoryProfile":
        """Closed loop with heading along the tangent and a small roll/pitch wobble."""
        if preset not in PRESETS:
            raise KeyError(f"unknown motion preset {preset!r}; choose from {sorted(PRESETS)}")
        max_acc, max_angv = PRESETS[preset]
        t = np.linspace(0.0, duration, n_waypoints)
        phase = 2 * np.pi * loops * t / duration
        pos = np.stack([centre[0] + radii[0] * np.cos(phase),
                        centre[1] + radii[1] * np.sin(phase),
                        height + 0.2 * np.sin(2 * phase)], axis=1)
        tang = np.stack([-radii[0] * np.sin(phase), radii[1] * np.cos(phase)], axis=1)
        yaw = np.unwrap(np.arctan2(tang[:, 1], tang[:, 0]))
        rpy = np.stack([wobble * np.sin(3 * phase), wobble * np.cos(2 * phase), yaw], axis=1)
        return cls(t, pos, rpy, max_acc, max_angv)

    @classmethod
    def straight(cls, length: float = 20.0, duration: float = 10.0, height: float = 1.5,
                 preset: str = "custom_rig", y: float = 0.0) -> "TrajectoryProfile":
        """Forward run along +x with gentle lateral sway (a corridor walk)."""
        max_acc, max_angv = PRESETS[preset]
        t = np.linspace(0.0, duration, 11)
        s = t / duration
        pos = np.stack([length * s, y + 0.3 * np.sin(2 * np.pi * s), height + 0.1 * np.sin(4 * np.pi * s)], axis=1)
        rpy = np.stack([0.02 * np.sin(6 * np.pi * s), 0.02 * np.cos(4 * np.pi * s),
                        0.1 * np.sin(2 * np.pi * s)], axis=1)
        return cls(t, pos, rpy, max_acc, max_angv)


# -- IMU --------------------------------------------------------------------------

@dataclass
class ImuStream:
    stamps: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    def between(self, t0: float, t1: float, tol: float = 1e-9):
        """Samples with t0 <= stamp <= t1 (both endpoints included)."""
        m = (self.stamps >= t0 - tol) & (self.stamps <= t1 + tol)
        return self.stamps[m], self.gyro[m], self.accel[m]


def simulate_imu(profile: TrajectoryProfile, rate: float = 200.0, noise: SensorNoise | None = None,
                 rng: np.random.Generator | None = None) -> ImuStream:
    """Gyro = body rate, accel = R^T (a - g), plus white noise and bias random walk."""
    if rate < 100.0:
        raise ValueError("IMU rate must be at least 100 Hz")
    noise = noise or SensorNoise.noiseless()
    rng = rng if rng is not None else np.random.default_rng(0)
    n = int(round(profile.duration * rate)) + 1
    stamps = profile.start + np.arange(n) / rate
    stamps[-1] = min(stamps[-1], profile.end)
    R, _, _, a, w = profile.state(stamps)
    acc = np.einsum("nji,nj->ni", R, a - GRAVITY)
    dt = 1.0 / rate
    bg = np.cumsum(rng.normal(0.0, noise.gyro_bias_walk * math.sqrt(dt), size=(n, 3)), axis=0) \
        if noise.gyro_bias_walk > 0 else np.zeros((n, 3))
    ba = np.cumsum(rng.normal(0.0, noise.accel_bias_walk * math.sqrt(dt), size=(n, 3)), axis=0) \
        if noise.accel_bias_walk > 0 else np.zeros((n, 3))
    gyro = w + bg
    accel = acc + ba
    if noise.gyro_sigma > 0:
        gyro = gyro + rng.normal(0.0, noise.gyro_sigma, size=gyro.shape)
    if noise.accel_sigma > 0:
        accel = accel + rng.normal(0.0, noise.accel_sigma, size=accel.shape)
    return ImuStream(stamps, gyro, accel, bg, ba)


# -- cameras ---------------------------------------------------------------------

def visible(world: World, cam_pose: Pose, camera, points, tol: float = 0.05,
            occlusion: bool = True, min_depth: float = 0.3):
    """Normalised coordinates of ``points`` and a visibility mask for one camera pose."""
    pc = cam_pose.inverse().apply(points).reshape(-1, 3)
    z = pc[:, 2]
    front = z > min_depth
    xy = np.zeros((len(pc), 2))
    xy[front] = pc[front, :2] / z[front, None]
    ok = front & camera.in_image(xy[:, 0], xy[:, 1])
    if occlusion and ok.any() and world.n_surfaces:
        idx = np.flatnonzero(ok)
        vec = points[idx] - cam_pose.t
        dist = np.linalg.norm(vec, axis=1)
        r, _ = raycast(world, cam_pose.t, vec / dist[:, None])
        ok[idx[r < dist - tol]] = False
    return xy, ok


def simulate_tracks(world: World, poses, rig: CameraRig, noise: SensorNoise,
                    dropouts=(), rng: np.random.Generator | None = None,
                    occlusion: bool = True) -> list:
    """Per-frame feature observations for every camera.

    ``poses`` is the list of body poses, one per frame. ``dropouts`` is a list
    of ``(camera, first_frame, last_frame)`` (inclusive; camera by index or
    name). Each contiguous visibility run of a (landmark, camera) pair is one
    track with a unique id, so ids never jump between cameras.
    Returns ``frames``: a list, per frame, of dicts ``{id: (camera, landmark, xy)}``
    and the flat track list as second value.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    drop = []
    for cam, f0, f1 in dropouts:
        ci = rig.index(cam) if isinstance(cam, str) else int(cam)
        if not 0 <= ci < len(rig):
            raise KeyError(f"dropout camera {cam!r} not in rig")
        drop.append((ci, int(f0), int(f1)))
    n_lm = len(world.landmarks)
    active = {}                 # (camera, landmark) -> track
    tracks = []
    frames = []
    next_id = 0
    for f, body in enumerate(poses):
        obs_f = {}
        for ci, cam in enumerate(rig.cameras):
            dropped = any(c == ci and f0 <= f <= f1 for c, f0, f1 in drop)
            if dropped or n_lm == 0:
                vis = np.zeros(n_lm, dtype=bool)
                xy = np.zeros((n_lm, 2))
            else:
                xy, vis = visible(world, compose(body, cam.extrinsic), cam, world.landmarks,
                                  occlusion=occlusion)
            if noise.pixel_sigma > 0:
                xy = xy + rng.normal(0.0, noise.pixel_sigma, size=xy.shape) / np.array([cam.fx, cam.fy])
            for lm in range(n_lm):
                key = (ci, lm)
                if not vis[lm]:
                    active.pop(key, None)
                    continue
                tr = active.get(key)
                if tr is None:
                    tr = FeatureTrack(next_id, ci, [])
                    tr.landmark = lm
                    next_id += 1
                    active[key] = tr
                    tracks.append(tr)
                tr.add(f, xy[lm])
                obs_f[tr.feature_id] = (ci, lm, xy[lm].copy())
        frames.append(obs_f)
    return frames, tracks


# -- scenario --------------------------------------------------------------------

@dataclass
class Scenario:
    """Everything needed to regenerate a dataset."""

    seed: int = 7
    world: str = "box_room"
    n_landmarks: int = 200
    preset: str = "quad_medium"
    duration: float = 10.0
    scan_rate: float = 10.0
    imu_rate: float = 200.0
    n_rings: int = 16
    fov_deg: tuple = (-15.0, 15.0)
    h_res_deg: float = 0.4
    max_range: float = 100.0
    noise: SensorNoise = field(default_factory=SensorNoise)
    cameras: list = field(default_factory=lambda: ["front", "right", "left"])
    dropouts: list = field(default_factory=list)

    def beam_model(self) -> BeamModel:
        return BeamModel.uniform(self.n_rings, self.fov_deg[0], self.fov_deg[1], self.h_res_deg,
                                 self.max_range)

    def build_world(self) -> World:
        if self.world == "box_room":
            return box_room(self.seed, self.n_landmarks)
        if self.world == "corridor":
            return corridor(seed=self.seed, n_landmarks=self.n_landmarks)
        raise KeyError(f"unknown world {self.world!r}")

    def profile(self) -> TrajectoryProfile:
        if self.world == "corridor":
            return TrajectoryProfile.straight(duration=self.duration, preset=self.preset)
        return TrajectoryProfile.ellipse(self.preset, self.duration)

    def rig(self) -> CameraRig:
        full = CameraRig.three_camera()
        return full.subset(self.cameras)[0]

    def scan_stamps(self, profile: TrajectoryProfile) -> np.ndarray:
        n = int(math.floor(profile.duration * self.scan_rate + 1e-9)) + 1
        return profile.start + np.arange(n) / self.scan_rate


@dataclass
class SimulatedData:
    scenario: Scenario
    world: World
    profile: TrajectoryProfile
    model: BeamModel
    rig: CameraRig
    stamps: np.ndarray
    truth: list            # StampedPose per scan
    scans: list            # PointCloud per scan
    imu: ImuStream
    frames: list           # per-frame observation dict
    tracks: list


def generate(scn: Scenario) -> SimulatedData:
    """Deterministic dataset for a scenario (independent RNG streams per sensor)."""
    ss = np.random.SeedSequence(scn.seed)
    r_scan, r_imu, r_cam = (np.random.default_rng(s) for s in ss.spawn(3))
    world = scn.build_world()
    profile = scn.profile()
    model = scn.beam_model()
    rig = scn.rig()
    stamps = scn.scan_stamps(profile)
    truth = profile.stamped_poses(stamps)
    scans = [simulate_scan(world, sp.pose, model, scn.noise, r_scan, float(sp.stamp)) for sp in truth]
    imu = simulate_imu(profile, scn.imu_rate, scn.noise, r_imu)
    frames, tracks = simulate_tracks(world, [sp.pose for sp in truth], rig, scn.noise,
                                     scn.dropouts, r_cam)
    return SimulatedData(scn, world, profile, model, rig, stamps, truth, scans, imu, frames, tracks)
