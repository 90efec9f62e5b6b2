"""Sliding-window visual-inertial estimation.

Each frame carries 9 parameters ordered (rotation, translation, velocity),
updated by a right perturbation on rotation and addition elsewhere. Every
track contributes one inverse-depth parameter relative to its host frame.
The cost is

    |r_prior|^2 + sum_k |r_imu,k|^2 + sum_cameras sum_obs |r_visual|^2

with every term already whitened.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import DegenerateError
from ..geometry import Pose, boxplus, compose, right_jacobian_inv, so3_exp, so3_log
from .camera import (LIDAR, CameraRig, FeatureTrack, bearing, prime_depth, reprojection_batch,
                     triangulate)
from .preintegration import GRAVITY, ImuPreintegration, imu_residual, sqrt_information

_AXES = ("x", "y", "z")
_BLOCKS = ("rot", "pos", "vel")


@dataclass
class FrameState:
    pose: Pose
    velocity: np.ndarray
    stamp: float = 0.0
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "FrameState":
        return FrameState(self.pose, np.array(self.velocity, float), self.stamp,
                          self.bias_gyro.copy(), self.bias_acc.copy())

    def moved(self, delta) -> "FrameState":
        """Apply a 9-vector (rotation, translation, velocity) update."""
        return FrameState(boxplus(self.pose, delta[:6]), self.velocity + delta[6:9], self.stamp,
                          self.bias_gyro, self.bias_acc)


@dataclass
class WindowState:
    """Frames keyed by frame id (time ordered) plus per-track inverse depth."""

    frames: dict = field(default_factory=dict)
    inv_depth: dict = field(default_factory=dict)
    hosts: dict = field(default_factory=dict)
    window_size: int = 10

    def copy(self) -> "WindowState":
        return WindowState({k: v.copy() for k, v in self.frames.items()}, dict(self.inv_depth),
                           dict(self.hosts), self.window_size)

    @property
    def frame_ids(self) -> list:
        return list(self.frames)

    def check_finite(self) -> None:
        for f, s in self.frames.items():
            if not (np.all(np.isfinite(s.pose.t)) and np.all(np.isfinite(s.velocity))):
                raise ValueError(f"frame {f} has non-finite state")
        for t, rho in self.inv_depth.items():
            if not np.isfinite(rho):
                raise ValueError(f"track {t} has non-finite inverse depth")


def frame_delta(lin: FrameState, cur: FrameState) -> np.ndarray:
    """9-vector taking ``lin`` to ``cur`` under :meth:`FrameState.moved`."""
    return np.concatenate([so3_log(lin.pose.R.T @ cur.pose.R), cur.pose.t - lin.pose.t,
                           cur.velocity - lin.velocity])


@dataclass
class MarginalPrior:
    """Linear prior ``r + J * delta`` on a set of frames.

    ``delta`` stacks :func:`frame_delta` of each frame from its linearisation
    state; ``J`` has 9 columns per frame in ``frame_ids`` order.
    """

    frame_ids: list
    linearization: list
    r: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, float)
        self.J = np.asarray(self.J, float)
        if self.J.shape != (len(self.r), 9 * len(self.frame_ids)):
            raise ValueError(f"prior Jacobian shape {self.J.shape} does not match "
                             f"{len(self.r)} rows x {len(self.frame_ids)} frames")
        if not (np.all(np.isfinite(self.J)) and np.all(np.isfinite(self.r))):
            raise ValueError("prior is not finite")

    @classmethod
    def anchor(cls, frame_id, state: FrameState, sigma_rot: float = 1e-4,
               sigma_pos: float = 1e-4, sigma_vel: float | None = None) -> "MarginalPrior":
        """Pin a frame's pose (and optionally velocity) with isotropic sigmas."""
        rows = [np.eye(9)[0:3] / sigma_rot, np.eye(9)[3:6] / sigma_pos]
        if sigma_vel is not None:
            rows.append(np.eye(9)[6:9] / sigma_vel)
        J = np.vstack(rows)
        return cls([frame_id], [state.copy()], np.zeros(len(J)), J)

    def residual(self, states: WindowState, jacobian: bool = True):
        cols = []
        delta = []
        for f, lin in zip(self.frame_ids, self.linearization):
            cur = states.frames[f]
            d = frame_delta(lin, cur)
            delta.append(d)
            if jacobian:
                D = np.eye(9)
                D[0:3, 0:3] = right_jacobian_inv(d[0:3])
                cols.append(D)
        r = self.r + self.J @ np.concatenate(delta)
        if not jacobian:
            return r, None
        n = len(self.frame_ids)
        D = np.zeros((9 * n, 9 * n))
        for i, blk in enumerate(cols):
            D[9 * i:9 * i + 9, 9 * i:9 * i + 9] = blk
        return r, self.J @ D

    def to_dict(self) -> dict:
        return {"frame_ids": [int(f) for f in self.frame_ids], "rows": int(len(self.r))}


@dataclass
class WindowConfig:
    pixel_sigma: float = 1.5
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    max_iterations: int = 20
    max_halvings: int = 8
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    degenerate_tol: float = 1e-12
    marginal_reg: float = 1e-8
    min_inv_depth: float = 1e-3
    # hold LiDAR-primed inverse depths constant; they then carry metric scale
    fix_lidar_depth: bool = False


@dataclass
class WindowReport:
    iterations: int
    cost_history: list
    final_cost: float
    prior_cost: float
    imu_cost: float
    camera_costs: list
    camera_residual_counts: list
    converged: bool
    camera_names: list = field(default_factory=list)

    @property
    def visual_cost(self) -> float:
        return float(sum(self.camera_costs))

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "cost_history": [float(c) for c in self.cost_history],
                "final_cost": self.final_cost, "prior_cost": self.prior_cost,
                "imu_cost": self.imu_cost, "camera_costs": [float(c) for c in self.camera_costs],
                "camera_residual_counts": [int(c) for c in self.camera_residual_counts],
                "camera_names": list(self.camera_names), "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- problem assembly ---------------------------------------------------------------

class _Layout:
    """Column index of every free parameter."""

    def __init__(self, frame_ids, track_ids):
        self.frame_ids = list(frame_ids)
        self.frame_col = {f: 9 * i for i, f in enumerate(self.frame_ids)}
        base = 9 * len(self.frame_ids)
        self.track_ids = list(track_ids)
        self.track_col = {t: base + i for i, t in enumerate(self.track_ids)}
        self.size = base + len(self.track_ids)

    def label(self, col: int) -> str:
        if col < 9 * len(self.frame_ids):
            f = self.frame_ids[col // 9]
            k = col % 9
            return f"frame {f} {_BLOCKS[k // 3]}.{_AXES[k % 3]}"
        return f"track {self.track_ids[col - 9 * len(self.frame_ids)]} inverse depth"


def _visual_rows(states: WindowState, tracks, host_filter=None):
    """(track, host frame, host xy, target frame, target xy) for every usable observation."""
    rows = []
    for tr in sorted(tracks, key=lambda t: t.feature_id):
        tid = tr.feature_id
        if tid not in states.inv_depth:
            continue
        host = states.hosts.get(tid, tr.host_frame)
        if host not in states.frames or (host_filter is not None and host != host_filter):
            continue
        try:
            hxy = tr.observation(host)
        except KeyError:
            continue
        for f, xy in tr.observations:
            if f != host and f in states.frames:
                rows.append((tr, host, hxy, f, xy))
    return rows


def _imu_pairs(states: WindowState, preints):
    ids = states.frame_ids
    out = []
    for a, b in zip(ids[:-1], ids[1:]):
        pre = preints.get((a, b))
        if pre is not None:
            out.append((a, b, pre))
    return out


class _Problem:
    """Whitened residuals of one window, grouped by block type."""

    def __init__(self, states: WindowState, tracks, preints, prior, rig: CameraRig,
                 cfg: WindowConfig, host_filter=None, imu_pairs=None, with_prior=True):
        self.rig = rig
        self.cfg = cfg
        self.prior = prior if with_prior else None
        self.vis = _visual_rows(states, tracks, host_filter)
        self.imu = _imu_pairs(states, preints) if imu_pairs is None else imu_pairs
        self.sqrt_imu = [sqrt_information(p.covariance) for _, _, p in self.imu]
        self.fixed = {row[0].feature_id for row in self.vis
                      if cfg.fix_lidar_depth and row[0].depth_source == LIDAR}
        tids = sorted({row[0].feature_id for row in self.vis} - self.fixed)
        self.layout = _Layout(states.frame_ids, tids)
        self.cam = np.array([row[0].camera_index for row in self.vis], dtype=np.int64)
        self.s = np.array([rig[c].focal / cfg.pixel_sigma for c in self.cam])
        self.hxy = np.array([row[2] for row in self.vis]).reshape(-1, 2)
        self.txy = np.array([row[4] for row in self.vis]).reshape(-1, 2)
        self.host_col = np.array([self.layout.frame_col[row[1]] for row in self.vis], dtype=np.int64)
        self.target_col = np.array([self.layout.frame_col[row[3]] for row in self.vis], dtype=np.int64)
        self.rho_col = np.array([self.layout.track_col.get(row[0].feature_id, -1) for row in self.vis],
                                dtype=np.int64)
        ext = [rig[c].extrinsic for c in self.cam]
        self.Rbc = np.array([e.R for e in ext]).reshape(-1, 3, 3)
        self.tbc = np.array([e.t for e in ext]).reshape(-1, 3)

    def evaluate(self, states: WindowState, jacobian: bool = True):
        """Stacked residual, dense Jacobian and the cost of every block."""
        L = self.layout
        res, jac = [], []
        costs = {"prior": 0.0, "imu": 0.0}
        n_cam = len(self.rig)
        cam_cost = np.zeros(n_cam)
        cam_count = np.zeros(n_cam, dtype=np.int64)

        if self.prior is not None:
            r, J = self.prior.residual(states, jacobian)
            costs["prior"] = float(r @ r)
            res.append(r)
            if jacobian:
                M = np.zeros((len(r), L.size))
                for i, f in enumerate(self.prior.frame_ids):
                    c = L.frame_col[f]
                    M[:, c:c + 9] = J[:, 9 * i:9 * i + 9]
                jac.append(M)

        for (a, b, pre), si in zip(self.imu, self.sqrt_imu):
            sa, sb = states.frames[a], states.frames[b]
            r, Js = imu_residual(pre, (sa.pose, sa.velocity), (sb.pose, sb.velocity),
                                 self.cfg.gravity, si, jacobian)
            costs["imu"] += float(r @ r)
            res.append(r)
            if jacobian:
                M = np.zeros((9, L.size))
                M[:, L.frame_col[a]:L.frame_col[a] + 9] = Js[0]
                M[:, L.frame_col[b]:L.frame_col[b] + 9] = Js[1]
                jac.append(M)

        valid = np.zeros(0, bool)
        if self.vis:
            poses = [states.frames[f].pose for f in L.frame_ids]
            Rf = np.array([p.R for p in poses])
            pf = np.array([p.t for p in poses])
            hi, ti = self.host_col // 9, self.target_col // 9
            rho = np.array([states.inv_depth[row[0].feature_id] for row in self.vis])
            r, Jh, Jt, Jr, valid = reprojection_batch(self.hxy, self.txy, rho, Rf[hi], pf[hi], Rf[ti],
                                                      pf[ti], self.Rbc, self.tbc, self.s)
            per = np.einsum("ni,ni->n", r, r)
            np.add.at(cam_cost, self.cam, per)
            np.add.at(cam_count, self.cam[valid], 1)
            res.append(r.ravel())
            if jacobian:
                M = np.zeros((2 * len(self.vis), L.size))
                rows = (2 * np.arange(len(self.vis)))[:, None] + np.arange(2)
                six = np.arange(6)
                M[rows[:, :, None], (self.host_col[:, None] + six)[:, None, :]] = Jh
                M[rows[:, :, None], (self.target_col[:, None] + six)[:, None, :]] = Jt
                free = self.rho_col >= 0
                M[rows[free], self.rho_col[free, None]] = Jr[free]
                jac.append(M)
        costs["cameras"] = cam_cost
        costs["counts"] = cam_count
        costs["total"] = costs["prior"] + costs["imu"] + float(cam_cost.sum())
        r = np.concatenate(res) if res else np.zeros(0)
        J = np.vstack(jac) if (jacobian and jac) else np.zeros((0, L.size))
        return r, (J if jacobian else None), costs

    def apply(self, states: WindowState, delta: np.ndarray) -> WindowState:
        out = states.copy()
        L = self.layout
        for f in L.frame_ids:
            c = L.frame_col[f]
            out.frames[f] = states.frames[f].moved(delta[c:c + 9])
        for t in L.track_ids:
            out.inv_depth[t] = max(states.inv_depth[t] + delta[L.track_col[t]], self.cfg.min_inv_depth)
        return out


def _free_columns(H: np.ndarray, layout: _Layout) -> np.ndarray:
    """Columns to solve for; tracks whose every residual is invalid are held fixed."""
    d = np.diag(H)
    n_frame = 9 * len(layout.frame_ids)
    zero = np.flatnonzero(d[:n_frame] <= 1e-300)
    if len(zero):
        names = [layout.label(c) for c in zero]
        raise DegenerateError("unconstrained parameters: " + ", ".join(names[:9]), names)
    return np.flatnonzero((np.arange(len(d)) < n_frame) | (d > 1e-300))


def _check_rank(H: np.ndarray, layout: _Layout, tol: float, cols=None):
    cols = np.arange(len(H)) if cols is None else cols
    H = H[np.ix_(cols, cols)]
    d = np.sqrt(np.diag(H))
    Hs = H / np.outer(d, d)
    w, V = np.linalg.eigh(Hs)
    weak = np.flatnonzero(w < tol * w[-1])
    if len(weak):
        names = []
        for j in weak:
            v = V[:, j] / d
            v /= np.abs(v).max()
            top = np.argsort(-np.abs(v))[:3]
            names.append(" + ".join(f"{v[c]:+.2f} {layout.label(cols[c])}"
                                    for c in top if abs(v[c]) > 0.1))
        raise DegenerateError(f"{len(weak)} unobservable direction(s): " + "; ".join(names), names)


def window_cost(states: WindowState, tracks, preints, prior, rig: CameraRig,
                cfg: WindowConfig | None = None) -> dict:
    """Cost of every block at ``states`` without optimising."""
    prob = _Problem(states, tracks, preints, prior, rig, cfg or WindowConfig())
    return prob.evaluate(states, jacobian=False)[2]


def optimize_window(states: WindowState, tracks, preints, prior: MarginalPrior | None,
                    rig: CameraRig, cfg: WindowConfig | None = None):
    """Gauss-Newton with step halving on the whitened window cost.

    ``preints`` maps consecutive ``(frame_a, frame_b)`` ids to an
    :class:`ImuPreintegration`. Raises :class:`DegenerateError` when the
    Jacobi-scaled normal matrix has a (near) null direction.
    """
    cfg = cfg or WindowConfig()
    states.check_finite()
    prob = _Problem(states, tracks, preints, prior, rig, cfg)
    cur = states.copy()
    r, J, costs = prob.evaluate(cur)
    history = [costs["total"]]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        H = J.T @ J
        g = J.T @ r
        free = _free_columns(H, prob.layout)
        if it == 1:
            # the sparsity pattern, hence observability, is fixed within one solve
            _check_rank(H, prob.layout, cfg.degenerate_tol, free)
        Hf = H[np.ix_(free, free)]
        d = np.sqrt(np.diag(Hf))
        step = np.zeros(len(g))
        step[free] = -cho_solve(cho_factor(Hf / np.outer(d, d)), g[free] / d) / d
        if np.abs(step).max() < cfg.step_tol:
            converged = True
            break
        accepted = False
        alpha = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = prob.apply(cur, alpha * step)
            r1, J1, c1 = prob.evaluate(trial)
            if c1["total"] <= costs["total"]:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True          # no descent left at this linearisation
            break
        drop = costs["total"] - c1["total"]
        cur, r, J, costs = trial, r1, J1, c1
        history.append(costs["total"])
        if drop <= cfg.cost_tol * max(costs["total"], 1e-300) or \
                np.abs(alpha * step).max() < cfg.step_tol:
            converged = True
            break
    report = WindowReport(it, history, costs["total"], costs["prior"], costs["imu"],
                          [float(c) for c in costs["cameras"]],
                          [int(c) for c in costs["counts"]], converged, rig.names)
    return cur, report


# -- marginalisation -----------------------------------------------------------------

def schur_marginalize(H: np.ndarray, b: np.ndarray, keep, marg, reg: float = 1e-8):
    """Eliminate ``marg`` from the normal system ``H x = -b``.

    Returns ``(H_keep, b_keep, regularised)``.
    """
    keep = np.asarray(keep, dtype=np.int64)
    marg = np.asarray(marg, dtype=np.int64)
    Hmm = H[np.ix_(marg, marg)]
    Hkm = H[np.ix_(keep, marg)]
    regularised = False
    if len(marg):
        w = np.linalg.eigvalsh(Hmm)
        if w[0] <= 1e-12 * max(w[-1], 1e-300):
            Hmm = Hmm + reg * np.eye(len(marg))
            regularised = True
        Hmm_inv = np.linalg.inv(Hmm)
        Hk = H[np.ix_(keep, keep)] - Hkm @ Hmm_inv @ Hkm.T
        bk = b[keep] - Hkm @ Hmm_inv @ b[marg]
    else:
        Hk = H[np.ix_(keep, keep)].copy()
        bk = b[keep].copy()
    return 0.5 * (Hk + Hk.T), bk, regularised


def prior_from_normal(H: np.ndarray, b: np.ndarray, eps: float = 1e-12):
    """(r, J) with J^T J = H and J^T r = b on the well-determined subspace."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    ok = w > eps * max(w.max(), 1e-300)
    s = np.sqrt(w[ok])
    J = s[:, None] * V[:, ok].T
    r = (V[:, ok].T @ b) / s
    return r, J


def marginalize(states: WindowState, tracks, preints, prior: MarginalPrior | None,
                rig: CameraRig, cfg: WindowConfig | None = None, departing=None):
    """Fold the oldest frame (and tracks hosted there) into a prior.

    Returns ``(prior, absorbed_track_ids)``. The previous prior is returned
    unchanged when nothing touches the departing frame.
    """
    cfg = cfg or WindowConfig()
    ids = states.frame_ids
    if departing is None:
        departing = ids[0]
    if departing not in states.frames:
        raise KeyError(f"frame {departing} not in window")
    imu = [(a, b, p) for a, b, p in _imu_pairs(states, preints) if departing in (a, b)]
    use_prior = prior is not None and departing in prior.frame_ids
    prob = _Problem(states, tracks, preints, prior, rig, cfg, host_filter=departing,
                    imu_pairs=imu, with_prior=use_prior)
    absorbed = list(prob.layout.track_ids)
    if not prob.vis and not imu and not use_prior:
        return prior, absorbed
    r, J, _ = prob.evaluate(states)
    L = prob.layout
    touched = np.flatnonzero(np.any(J != 0.0, axis=0))
    dep_cols = set(range(L.frame_col[departing], L.frame_col[departing] + 9))
    dep_cols |= {L.track_col[t] for t in L.track_ids}
    keep_frames = [f for f in ids if f != departing and any(
        c in touched for c in range(L.frame_col[f], L.frame_col[f] + 9))]
    if use_prior:
        keep_frames = [f for f in ids if f != departing and (f in keep_frames or f in prior.frame_ids)]
    keep_cols = np.concatenate([np.arange(L.frame_col[f], L.frame_col[f] + 9) for f in keep_frames]) \
        if keep_frames else np.zeros(0, np.int64)
    marg_cols = np.array(sorted(dep_cols), dtype=np.int64)
    H = J.T @ J
    g = J.T @ r
    Hk, gk, regularised = schur_marginalize(H, g, keep_cols, marg_cols, cfg.marginal_reg)
    if regularised:
        warnings.warn("singular marginalised block regularised with "
                      f"{cfg.marginal_reg:g} diagonal", RuntimeWarning, stacklevel=2)
    rp, Jp = prior_from_normal(Hk, gk)
    lin = [states.frames[f].copy() for f in keep_frames]
    return MarginalPrior(keep_frames, lin, rp, Jp), absorbed


def rehost(states: WindowState, track: FeatureTrack, rig: CameraRig) -> bool:
    """Move a track's host to its next in-window observation. False when it has none."""
    tid = track.feature_id
    old = states.hosts.get(tid, track.host_frame)
    later = [f for f in track.frames if f > old and f in states.frames]
    if not later or tid not in states.inv_depth:
        states.inv_depth.pop(tid, None)
        states.hosts.pop(tid, None)
        return False
    ext = rig[track.camera_index].extrinsic
    host_cam = compose(states.frames[old].pose, ext)
    pw = host_cam.apply(bearing(track.observation(old)) / states.inv_depth[tid])
    new_cam = compose(states.frames[later[0]].pose, ext)
    pc = new_cam.inverse().apply(pw).ravel()
    if pc[2] <= 0.1:
        states.inv_depth.pop(tid, None)
        states.hosts.pop(tid, None)
        return False
    states.inv_depth[tid] = 1.0 / float(np.linalg.norm(pc))
    states.hosts[tid] = later[0]
    return True


def propagate(state: FrameState, pre: ImuPreintegration, stamp: float,
              gravity=GRAVITY) -> FrameState:
    """Predict the next frame state from a preintegration."""
    R, p, v = state.pose.R, state.pose.t, state.velocity
    T = pre.duration
    Rn = R @ pre.dR
    vn = v + gravity * T + R @ pre.dv
    pn = p + v * T + 0.5 * gravity * T * T + R @ pre.dp
    return FrameState(Pose.from_matrix(Rn, pn), vn, stamp, state.bias_gyro, state.bias_acc)


# -- estimator ------------------------------------------------------------------------

class SlidingWindowEstimator:
    """Fixed-size window fed one frame at a time.

    ``add_frame`` takes the preintegration from the previous frame, the
    frame's observations ``{track_id: (camera, xy)}`` and optionally the
    LiDAR points in the body frame for depth priming.
    """

    def __init__(self, rig: CameraRig, window_size: int = 10, cfg: WindowConfig | None = None,
                 cone_deg: float = 1.0, rehost_tracks: bool = True):
        self.rig = rig
        self.cfg = cfg or WindowConfig()
        self.cone_deg = cone_deg
        self.rehost_tracks = rehost_tracks
        self.states = WindowState(window_size=window_size)
        self.tracks: dict = {}
        self.preints: dict = {}
        self.prior: MarginalPrior | None = None
        self.reports: list = []
        self.failures: list = []

    @property
    def latest(self) -> FrameState:
        return next(reversed(self.states.frames.values()))

    def initialize(self, frame_id, stamp, pose: Pose, velocity, observations=None,
                   body_points=None, sigma_rot=1e-4, sigma_pos=1e-4, sigma_vel=None):
        st = FrameState(pose, np.asarray(velocity, float), stamp)
        self.states.frames[frame_id] = st
        self.prior = MarginalPrior.anchor(frame_id, st, sigma_rot, sigma_pos, sigma_vel)
        self._observe(frame_id, observations or {}, body_points)

    def _observe(self, frame_id, observations, body_points):
        for tid, (cam, xy) in observations.items():
            tr = self.tracks.get(tid)
            if tr is None:
                tr = FeatureTrack(tid, int(cam), [])
                self.tracks[tid] = tr
            elif tr.camera_index != cam:
                raise ValueError(f"track {tid} switched camera {tr.camera_index} -> {cam}")
            tr.add(frame_id, xy)
            if tid not in self.states.inv_depth and tid not in self.states.hosts:
                self.states.hosts[tid] = frame_id
                if body_points is not None and len(body_points):
                    ext = self.rig[cam].extrinsic
                    prime_depth(tr, ext.inverse().apply(body_points).reshape(-1, 3), self.cone_deg)
                    if tr.depth_source == LIDAR:
                        self.states.inv_depth[tid] = 1.0 / tr.depth_prior
        self._triangulate_pending()

    def _triangulate_pending(self):
        poses = {f: s.pose for f, s in self.states.frames.items()}
        for tid, host in list(self.states.hosts.items()):
            if tid in self.states.inv_depth:
                continue
            tr = self.tracks[tid]
            inwin = [f for f in tr.frames if f in poses]
            if len(inwin) < 2 or host not in poses:
                continue
            sub = FeatureTrack(tid, tr.camera_index, [(f, tr.observation(f)) for f in inwin if f >= host])
            d = triangulate(sub, poses, self.rig)
            if d is not None:
                self.states.inv_depth[tid] = 1.0 / d

    def add_frame(self, frame_id, stamp, preint: ImuPreintegration, observations=None,
                  body_points=None) -> FrameState:
        prev_id = self.states.frame_ids[-1]
        self.preints[(prev_id, frame_id)] = preint
        self.states.frames[frame_id] = propagate(self.states.frames[prev_id], preint, stamp,
                                                 self.cfg.gravity)
        self._observe(frame_id, observations or {}, body_points)
        active = [self.tracks[t] for t in self.states.inv_depth]
        try:
            self.states, rep = optimize_window(self.states, active, self.preints, self.prior,
                                               self.rig, self.cfg)
            self.reports.append(rep)
        except DegenerateError as exc:
            self.failures.append((frame_id, str(exc)))
            raise
        finally:
            if len(self.states.frames) > self.states.window_size:
                self._slide()
        return self.latest

    def _slide(self):
        active = [self.tracks[t] for t in self.states.inv_depth]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.prior, absorbed = marginalize(self.states, active, self.preints, self.prior,
                                               self.rig, self.cfg)
        dep = self.states.frame_ids[0]
        for tid in list(self.states.hosts):
            if self.states.hosts[tid] != dep:
                continue
            if self.rehost_tracks and tid in absorbed:
                rehost(self.states, self.tracks[tid], self.rig)
            else:
                self.states.inv_depth.pop(tid, None)
                self.states.hosts.pop(tid, None)
        del self.states.frames[dep]
        for key in [k for k in self.preints if dep in k]:
            del self.preints[key]
        for tid in [t for t, tr in self.tracks.items()
                    if tr.frames[-1] < self.states.frame_ids[0] and t not in self.states.hosts]:
            del self.tracks[tid]
