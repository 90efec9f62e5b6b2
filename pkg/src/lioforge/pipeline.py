"""LiDAR-inertial-visual odometry loop over a recorded or simulated dataset.

Per scan: optional noise removal, feature extraction, the visual-inertial
window update (fusion), scan matching from the fused guess, then the local
map update. If the window becomes degenerate the scan is matched from the
IMU-propagated guess and the run continues.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateError
from .evaluation import TimingTable
from .geometry import Pose, StampedPose, boxplus, compose, inverse
from .lidar_features import FeatureConfig, extract
from .range_image import BeamModel, denoise
from .scan_matching import LocalMap, MatchConfig, match, update_local_map
from .vio.camera import CameraRig, align_sfm_to_body, extrinsic_terms
from .vio.preintegration import GRAVITY, preintegrate
from .vio.window import SlidingWindowEstimator, WindowConfig

log = logging.getLogger(__name__)

METHOD_FLAGS = {
    # noise removal, correspondence reuse, incremental map
    "A": (False, False, False),
    "B": (True, False, False),
    "C": (True, True, False),
    "D": (True, True, True),
}


@dataclass
class DenoiseConfig:
    theta_deg: float = 10.0
    min_cluster: int = 30
    min_ring_span: int = 3


@dataclass
class PipelineConfig:
    method: str = "D"
    cameras: list = field(default_factory=lambda: ["front", "right", "left"])
    use_vio: bool = True
    window_size: int = 10
    features: FeatureConfig = field(default_factory=FeatureConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    map_voxel: float = 0.4
    map_window: float = 30.0
    init_camera: str = "front"
    init_rot_sigma: float = 0.0
    init_pos_sigma: float = 0.0
    init_vel_sigma: float = 0.02
    gyro_sigma: float = 1e-3
    acc_sigma: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHOD_FLAGS:
            raise ValueError(f"method must be one of {sorted(METHOD_FLAGS)}, got {self.method!r}")
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if not self.cameras and self.use_vio:
            raise ValueError("VIO needs at least one camera")

    @property
    def flags(self) -> tuple:
        return METHOD_FLAGS[self.method]

    def with_method(self, method: str, use_vio: bool | None = None) -> "PipelineConfig":
        return replace(self, method=method, use_vio=self.use_vio if use_vio is None else use_vio)


@dataclass
class PipelineResult:
    estimate: list
    vio_estimate: list
    match_reports: list
    window_reports: list
    timing: TimingTable
    degenerate_frames: list
    match_failures: list
    map_stats: dict
    config: PipelineConfig

    def counts(self) -> dict:
        executed = sum(r.nns_rounds_executed for r in self.match_reports)
        skipped = sum(r.nns_rounds_skipped for r in self.match_reports)
        iters = sum(r.iterations for r in self.match_reports)
        pre = self.timing.stages["prehandle"]
        opt = self.timing.stages["optimization"]
        return {"nns_rounds_executed": int(executed), "nns_rounds_skipped": int(skipped),
                "iterations": int(iters), "prehandle_points": int(pre.points),
                "optimizer_points": int(opt.points),
                "map_update_seconds": float(self.map_stats.get("update_seconds", 0.0)),
                "degenerate_frames": len(self.degenerate_frames),
                "match_failures": len(self.match_failures)}

    def report(self) -> dict:
        return {"method": self.config.method, "cameras": list(self.config.cameras),
                "use_vio": self.config.use_vio, "counts": self.counts(),
                "timing": self.timing.to_dict(),
                "match_reports": [r.to_dict() for r in self.match_reports],
                "window_reports": [r.to_dict() for r in self.window_reports],
                "degenerate_frames": [{"frame": f, "message": m} for f, m in self.degenerate_frames],
                "match_failures": [{"frame": f, "message": m} for f, m in self.match_failures],
                "map": self.map_stats}


def select_cameras(rig: CameraRig, names):
    """Sub-rig and the dataset index of each kept camera; KeyError on unknown names."""
    names = list(names)
    for n in names:
        if n not in rig.names:
            raise KeyError(f"camera {n!r} not in rig {rig.names}")
    sub, idx = rig.subset(names)
    return sub, idx


def _initial_state(data, cfg: PipelineConfig, rng):
    """Frame-0 body pose and velocity from corrupted truth via the camera alignment."""
    body = data.truth[0].pose
    cam = data.rig[data.rig.index(cfg.init_camera)] if cfg.init_camera in data.rig.names else data.rig[0]
    cam_pose = compose(body, cam.extrinsic)
    noisy = boxplus(cam_pose, np.concatenate([rng.normal(0, cfg.init_rot_sigma, 3),
                                               rng.normal(0, cfg.init_pos_sigma, 3)]))
    R_cb, p_cb = extrinsic_terms(cam.extrinsic)
    pose0 = align_sfm_to_body([noisy], R_cb, p_cb, 1.0)[0]
    if len(data.truth) > 1:
        dt = data.truth[1].stamp - data.truth[0].stamp
        v0 = (data.truth[1].pose.t - data.truth[0].pose.t) / dt
        # forward difference is first order; correct with the IMU over the same gap
        t, g, a = data.imu.between(data.truth[0].stamp, data.truth[1].stamp)
        if len(t) >= 2:
            pre = preintegrate(t, g, a)
            v0 = (data.truth[1].pose.t - data.truth[0].pose.t - 0.5 * GRAVITY * dt * dt
                  - body.R @ pre.dp) / dt
    else:
        v0 = np.zeros(3)
    return pose0, v0 + rng.normal(0, cfg.init_vel_sigma, 3)


def _propagate_pose(pose: Pose, vel, pre):
    T = pre.duration
    R = pose.R
    p = pose.t + vel * T + 0.5 * GRAVITY * T * T + R @ pre.dp
    return Pose.from_matrix(R @ pre.dR, p), vel + GRAVITY * T + R @ pre.dv


def run_pipeline(data, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Odometry over ``data`` (a simulated or loaded dataset)."""
    cfg = cfg or PipelineConfig()
    do_denoise, do_skip, incremental = cfg.flags
    mcfg = cfg.match if do_skip else replace(cfg.match, skip_ratio=1.0)
    model: BeamModel = data.model
    rng = np.random.default_rng(cfg.seed)
    timing = TimingTable()
    cpu0, wall0 = time.process_time(), time.perf_counter()

    if cfg.use_vio:
        rig, cam_idx = select_cameras(data.rig, cfg.cameras)
        remap = {d: i for i, d in enumerate(cam_idx)}
        wcfg = replace(cfg.window, gravity=GRAVITY.copy())
        vio = SlidingWindowEstimator(rig, cfg.window_size, wcfg)
    else:
        rig, remap, vio = None, {}, None

    maps = LocalMap(cfg.map_voxel, cfg.map_window, incremental=incremental)
    pose0, vel0 = _initial_state(data, cfg, rng)
    estimate, vio_est = [], []
    match_reports, window_reports, degenerate, failures = [], [], [], []
    lio_pose, lio_vel = pose0, vel0
    vio_prev = pose0
    prev_stamp = None

    for k, scan in enumerate(data.scans):
        stamp = float(data.stamps[k])
        t0 = time.perf_counter()
        if do_denoise:
            scan_in, _ = denoise(scan, model, math.radians(cfg.denoise.theta_deg),
                                 cfg.denoise.min_cluster, cfg.denoise.min_ring_span)
        else:
            scan_in = scan
        timing.add("prehandle", time.perf_counter() - t0, len(scan_in))
        t0 = time.perf_counter()
        feats = extract(scan_in, model, cfg.features, stamp=stamp)
        timing.add("features", time.perf_counter() - t0, feats.n_points)

        obs = {}
        if vio is not None:
            for tid, (c, _lm, xy) in data.frames[k].items():
                if c in remap:
                    obs[tid] = (remap[c], xy)

        if k == 0:
            t0 = time.perf_counter()
            if vio is not None:
                vio.initialize(k, stamp, pose0, vel0, obs, scan_in.xyz)
            timing.add("fusion", time.perf_counter() - t0)
            t0 = time.perf_counter()
            update_local_map(maps, feats, lio_pose)
            timing.add("map_update", time.perf_counter() - t0, feats.n_points)
            estimate.append(StampedPose(stamp, lio_pose))
            vio_est.append(StampedPose(stamp, pose0))
            prev_stamp = stamp
            continue

        t, g, a = data.imu.between(prev_stamp, stamp)
        pre = preintegrate(t, g, a, gyro_sigma=cfg.gyro_sigma, acc_sigma=cfg.acc_sigma)
        imu_pose, imu_vel = _propagate_pose(lio_pose, lio_vel, pre)

        guess = imu_pose
        if vio is not None:
            t0 = time.perf_counter()
            try:
                vio.add_frame(k, stamp, pre, obs, scan_in.xyz)
                window_reports.append(vio.reports[-1])
            except DegenerateError as exc:
                degenerate.append((k, str(exc)))
                log.warning("frame %d: visual-inertial window degenerate (%s); "
                            "using IMU + LiDAR only", k, exc)
            vio_now = vio.latest.pose
            timing.add("fusion", time.perf_counter() - t0)
            if not degenerate or degenerate[-1][0] != k:
                guess = compose(lio_pose, compose(inverse(vio_prev), vio_now))
            vio_prev = vio_now
            vio_est.append(StampedPose(stamp, vio_now))

        t0 = time.perf_counter()
        try:
            rep = match(feats, guess, maps, mcfg)
            new_pose = rep.pose
            match_reports.append(rep)
        except DegenerateError as exc:
            failures.append((k, str(exc)))
            log.warning("frame %d: scan matching degenerate (%s); keeping the guess", k, exc)
            new_pose = guess
        timing.add("optimization", time.perf_counter() - t0, feats.n_points)

        # velocity consistent with the two matched poses and the IMU increment
        T = pre.duration
        v_prev = (new_pose.t - lio_pose.t - 0.5 * GRAVITY * T * T - lio_pose.R @ pre.dp) / T
        lio_vel = v_prev + GRAVITY * T + lio_pose.R @ pre.dv
        lio_pose = new_pose

        t0 = time.perf_counter()
        update_local_map(maps, feats, lio_pose)
        timing.add("map_update", time.perf_counter() - t0, feats.n_points)
        estimate.append(StampedPose(stamp, lio_pose))
        prev_stamp = stamp

    timing.cpu_seconds = time.process_time() - cpu0
    timing.wall_seconds = time.perf_counter() - wall0
    return PipelineResult(estimate, vio_est, match_reports, window_reports, timing, degenerate,
                          failures, maps.stats(), cfg)

