"""Single-window experiments on simulated data (camera dropout study)."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateError
from ..geometry import Pose, boxplus
from ..simulation import (SensorNoise, TrajectoryProfile, box_room, simulate_imu, simulate_scan,
                          simulate_tracks)
from ..range_image import BeamModel
from .camera import LIDAR, CameraRig, prime_depth, triangulate
from .preintegration import preintegrate
from .window import FrameState, MarginalPrior, WindowConfig, WindowState, optimize_window


def build_window(seed: int, cameras=("front", "right", "left"), dropout=None, n_frames: int = 10,
                 preset: str = "quad_medium", rate: float = 10.0, start: float = 0.0,
                 init_sigma=(0.01, 0.05, 0.05), noise: SensorNoise | None = None,
                 n_landmarks: int = 200):
    """Truth, initial guess and measurements for one window.

    ``dropout`` names a camera whose features vanish for the whole window.
    ``init_sigma`` is (rad, m, m/s) noise on every frame but the first, which
    is anchored at truth.
    """
    noise = noise or SensorNoise()
    ss = np.random.SeedSequence(seed)
    r_scan, r_imu, r_cam, r_init = (np.random.default_rng(s) for s in ss.spawn(4))
    world = box_room(seed, n_landmarks)
    profile = TrajectoryProfile.ellipse(preset)
    rig, _ = CameraRig.three_camera().subset(list(cameras))
    stamps = start + np.arange(n_frames) / rate
    truth = [profile.pose(t) for t in stamps]
    vel = [profile.velocity(t) for t in stamps]
    model = BeamModel.uniform(16, -15.0, 15.0, 0.4, 100.0)
    scans = [simulate_scan(world, p, model, noise, r_scan).xyz for p in truth]
    imu = simulate_imu(profile, 200.0, noise, r_imu)
    drop = [(dropout, 0, n_frames - 1)] if dropout is not None and dropout in rig.names else []
    _, tracks = simulate_tracks(world, truth, rig, noise, drop, r_cam)

    preints = {}
    for k in range(n_frames - 1):
        t, g, a = imu.between(stamps[k], stamps[k + 1])
        preints[(k, k + 1)] = preintegrate(t, g, a, gyro_sigma=max(noise.gyro_sigma, 1e-6),
                                           acc_sigma=max(noise.accel_sigma, 1e-5))
    init = WindowState(window_size=n_frames)
    sr, sp, sv = init_sigma
    for k in range(n_frames):
        if k == 0:
            init.frames[k] = FrameState(truth[k], np.array(vel[k]), float(stamps[k]))
            continue
        d = np.concatenate([r_init.normal(0, sr, 3), r_init.normal(0, sp, 3)])
        init.frames[k] = FrameState(boxplus(truth[k], d), vel[k] + r_init.normal(0, sv, 3),
                                    float(stamps[k]))
    poses = {k: s.pose for k, s in init.frames.items()}
    used = []
    for tr in tracks:
        host = tr.host_frame
        pts = rig[tr.camera_index].extrinsic.inverse().apply(scans[host]).reshape(-1, 3)
        prime_depth(tr, pts)
        d = tr.depth_prior if tr.depth_source == LIDAR else triangulate(tr, poses, rig)
        if d is None or len(tr.observations) < 2:
            continue
        init.inv_depth[tr.feature_id] = 1.0 / d
        init.hosts[tr.feature_id] = host
        used.append(tr)
    prior = MarginalPrior.anchor(0, init.frames[0])
    return {"truth": truth, "velocity": vel, "init": init, "tracks": used, "preints": preints,
            "prior": prior, "rig": rig}


def position_rmse(states: WindowState, truth) -> float:
    err = [states.frames[k].pose.t - truth[k].t for k in states.frames]
    return float(np.sqrt(np.mean(np.sum(np.square(err), axis=1))))


def dropout_trial(seed: int, cameras=("front", "right", "left"), dropout=None,
                  cfg: WindowConfig | None = None, **kw) -> dict:
    """Optimise one window; returns rmse / converged / degenerate."""
    w = build_window(seed, cameras, dropout, **kw)
    out = {"seed": seed, "cameras": list(cameras), "dropout": dropout,
           "initial_rmse": position_rmse(w["init"], w["truth"])}
    try:
        est, rep = optimize_window(w["init"], w["tracks"], w["preints"], w["prior"], w["rig"], cfg)
    except DegenerateError as exc:
        out.update(degenerate=True, converged=False, rmse=float("nan"), message=str(exc),
                   directions=exc.directions)
        return out
    out.update(degenerate=False, converged=rep.converged, rmse=position_rmse(est, w["truth"]),
               iterations=rep.iterations, camera_residual_counts=rep.camera_residual_counts,
               final_cost=rep.final_cost)
    return out
