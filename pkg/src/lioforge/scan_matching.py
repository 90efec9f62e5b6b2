"""Edge / planar scan-to-map registration and local map maintenance."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateError
from .geometry import Pose, Twist, boxplus, twist_norm
from .ikd_tree import IkdTree, voxel_filter
from .lidar_features import FeatureScan

EDGE = 0
PLANAR = 1


@dataclass
class Correspondence:
    kind: int
    point: np.ndarray            # feature point in the map frame
    anchor: np.ndarray           # EDGE: point on the line
    vector: np.ndarray           # EDGE: unit direction, PLANAR: unit normal
    offset: float = 0.0          # PLANAR: plane offset d, n.x + d = 0
    valid: bool = True

    @property
    def direction(self) -> np.ndarray:
        return self.vector

    @property
    def normal(self) -> np.ndarray:
        return self.vector


@dataclass
class CorrespondenceSet:
    """Vectorised correspondences for one association round (feature order kept)."""

    kind: np.ndarray             # (n,) EDGE / PLANAR
    source: np.ndarray           # (n,) body-frame feature points (n, 3)
    point: np.ndarray            # (n, 3) map-frame points at association time
    anchor: np.ndarray           # (n, 3)
    vector: np.ndarray           # (n, 3)
    offset: np.ndarray           # (n,)
    valid: np.ndarray            # (n,) bool

    def __len__(self) -> int:
        return len(self.kind)

    def __getitem__(self, i) -> Correspondence:
        return Correspondence(int(self.kind[i]), self.point[i].copy(), self.anchor[i].copy(),
                              self.vector[i].copy(), float(self.offset[i]), bool(self.valid[i]))

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def n_valid_of(self, kind: int) -> int:
        return int((self.valid & (self.kind == kind)).sum())

    @classmethod
    def concat(cls, parts) -> "CorrespondenceSet":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("kind", "source", "point", "anchor", "vector", "offset", "valid")))


@dataclass
class MatchConfig:
    max_iterations: int = 30
    delta_thres: Twist = field(default_factory=lambda: Twist([1e-3, 0.0, 0.0], [1e-3, 0.0, 0.0]))
    skip_ratio: float = 2.0
    knn_max_dist: float = 3.0
    huber_delta: float | None = 0.1
    rot_weight: float = 1.0
    k: int = 5
    edge_eigen_ratio: float = 3.0
    plane_max_deviation: float = 0.2
    min_plane_spread: float = 0.02
    plane_thinness: float = 0.003
    gate_floor: float | None = 0.01
    gate_scale: float = 3.0
    gate_after: float = 0.02
    min_correspondences: int = 10
    max_halvings: int = 8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.skip_ratio < 1.0:
            raise ValueError("skip_ratio must be >= 1 (1 disables skipping)")
        if self.k < 3:
            raise ValueError("k must be >= 3 for a line or plane fit")

    @property
    def threshold(self) -> float:
        return twist_norm(self.delta_thres, self.rot_weight)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_thres"] = {"rotation": self.delta_thres.rotation.tolist(),
                            "translation": self.delta_thres.translation.tolist()}
        return d


@dataclass
class MatchReport:
    pose: Pose
    iterations: int
    nns_rounds_executed: int
    nns_rounds_skipped: int
    final_cost: float
    residual_norms: list
    converged: bool
    n_edges: int = 0
    n_planars: int = 0
    step_norms: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pose": {"q": self.pose.q.tolist(), "t": self.pose.t.tolist()},
                "iterations": self.iterations,
                "nns_rounds_executed": self.nns_rounds_executed,
                "nns_rounds_skipped": self.nns_rounds_skipped,
                "final_cost": self.final_cost, "residual_norms": list(self.residual_norms),
                "step_norms": list(self.step_norms), "converged": self.converged,
                "n_edges": self.n_edges, "n_planars": self.n_planars}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual_norm", "step_norm"])
        for i, r in enumerate(self.residual_norms):
            s = self.step_norms[i] if i < len(self.step_norms) else ""
            w.writerow([i + 1, repr(float(r)), s if s == "" else repr(float(s))])
        return buf.getvalue()


# -- residuals --------------------------------------------------------------------

def _edge_terms(p, R, t, anchor, direction):
    q = p @ R.T + t
    c = np.cross(q - anchor, direction)
    r = np.linalg.norm(c, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dq = np.where(r[..., None] > 1e-15, np.cross(direction, c) / r[..., None], 0.0)
    J = np.concatenate([np.cross(p, dq @ R), dq], axis=-1)
    return r, J


def _planar_terms(p, R, t, normal, offset):
    q = p @ R.T + t
    r = np.einsum("...j,...j->...", normal, q) + offset
    J = np.concatenate([np.cross(p, normal @ R), normal], axis=-1)
    return r, J


def edge_residual(p, corr: Correspondence, pose: Pose | None = None):
    """Perpendicular distance of ``pose * p`` to the line, and its 6-gradient.

    The gradient is taken with respect to the (rotation, translation)
    perturbation of ``pose``.
    """
    pose = pose or Pose()
    if corr.kind != EDGE:
        raise ValueError("edge_residual needs an EDGE correspondence")
    r, J = _edge_terms(np.asarray(p, float), pose.R, pose.t, corr.anchor, corr.vector)
    return float(r), J


def planar_residual(p, corr: Correspondence, pose: Pose | None = None):
    """Signed distance n . (pose * p) + d and its 6-gradient."""
    pose = pose or Pose()
    if corr.kind != PLANAR:
        raise ValueError("planar_residual needs a PLANAR correspondence")
    r, J = _planar_terms(np.asarray(p, float), pose.R, pose.t, corr.vector, corr.offset)
    return float(r), J


def stacked_residuals(cs: CorrespondenceSet, pose: Pose):
    """Residuals and (n, 6) Jacobian of every valid correspondence."""
    v = cs.valid
    p = cs.source[v]
    kind = cs.kind[v]
    r = np.zeros(len(p))
    J = np.zeros((len(p), 6))
    e = kind == EDGE
    if e.any():
        r[e], J[e] = _edge_terms(p[e], pose.R, pose.t, cs.anchor[v][e], cs.vector[v][e])
    pl = ~e
    if pl.any():
        r[pl], J[pl] = _planar_terms(p[pl], pose.R, pose.t, cs.vector[v][pl], cs.offset[v][pl])
    return r, J


# -- association ------------------------------------------------------------------

def fit_lines(nbrs: np.ndarray, ratio: float = 3.0):
    """Centroid, principal direction and validity for each (m, k, 3) neighbour set."""
    centroid = nbrs.mean(axis=1)
    d = nbrs - centroid[:, None]
    cov = np.einsum("mki,mkj->mij", d, d) / nbrs.shape[1]
    w, V = np.linalg.eigh(cov)
    u = V[:, :, 2]
    ok = w[:, 2] >= ratio * np.maximum(w[:, 1], 0.0)
    ok &= w[:, 2] > 0
    return centroid, u, ok


def fit_planes(nbrs: np.ndarray, max_dev: float = 0.2, min_spread: float = 0.02,
               thinness: float = 1.0):
    """Unit normal, offset and validity (by max point-plane deviation)."""
    centroid = nbrs.mean(axis=1)
    d = nbrs - centroid[:, None]
    cov = np.einsum("mki,mkj->mij", d, d) / nbrs.shape[1]
    w, V = np.linalg.eigh(cov)
    n = V[:, :, 0]
    off = -np.einsum("mj,mj->m", n, centroid)
    dev = np.abs(np.einsum("mkj,mj->mk", nbrs, n) + off[:, None]).max(axis=1)
    ok = (dev <= max_dev) & (np.sqrt(np.maximum(w[:, 1], 0.0)) >= min_spread)
    ok &= w[:, 0] <= thinness * w[:, 1]
    return n, off, ok


def _associate_class(pts_body, pose, tree: IkdTree, kind, cfg: MatchConfig):
    n = len(pts_body)
    q = pts_body @ pose.R.T + pose.t if n else np.zeros((0, 3))
    anchor = np.zeros((n, 3))
    vec = np.zeros((n, 3))
    off = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    if n and len(tree):
        idx, _, cnt = tree.knn_batch(q, cfg.k, cfg.knn_max_dist)
        full = cnt >= cfg.k
        if full.any():
            nbrs = tree.points_of(idx[full])
            if kind == EDGE:
                a, u, ok = fit_lines(nbrs, cfg.edge_eigen_ratio)
                anchor[full], vec[full] = a, u
            else:
                nn, d, ok = fit_planes(nbrs, cfg.plane_max_deviation, cfg.min_plane_spread,
                                       cfg.plane_thinness)
                vec[full], off[full] = nn, d
                anchor[full] = nbrs.mean(axis=1)
            valid[full] = ok
    return CorrespondenceSet(np.full(n, kind, np.int64), pts_body.copy(), q, anchor, vec, off, valid)


def associate(features: FeatureScan, pose_guess: Pose, maps, cfg: MatchConfig | None = None,
              gate: bool = False) -> CorrespondenceSet:
    """k-NN line / plane fits for every feature at ``pose_guess``; edges first, then planars.

    With ``gate`` the residual gate of ``cfg`` is applied on top of the fit checks.
    """
    cfg = cfg or MatchConfig()
    if len(maps.edge_tree) == 0 and len(maps.planar_tree) == 0:
        raise ValueError("associate needs a non-empty map")
    e = _associate_class(np.asarray(features.edges, float).reshape(-1, 3), pose_guess,
                         maps.edge_tree, EDGE, cfg)
    p = _associate_class(np.asarray(features.planars, float).reshape(-1, 3), pose_guess,
                         maps.planar_tree, PLANAR, cfg)
    cs = CorrespondenceSet.concat([e, p])
    if gate and cfg.gate_floor is not None and cs.n_valid:
        apply_gate(cs, pose_guess, cfg.gate_floor, cfg.gate_scale)
    return cs


def apply_gate(cs: CorrespondenceSet, pose: Pose, floor: float, scale: float) -> float:
    """Invalidate correspondences whose residual at ``pose`` exceeds the robust gate.

    gate = max(floor, scale * 1.4826 * median|r|); returns the gate used.
    """
    r, _ = stacked_residuals(cs, pose)
    a = np.abs(r)
    gate = max(floor, scale * 1.4826 * float(np.median(a)))
    idx = np.flatnonzero(cs.valid)
    cs.valid[idx[a > gate]] = False
    return gate


# -- solver -----------------------------------------------------------------------

def huber_weights(r: np.ndarray, delta: float | None) -> np.ndarray:
    if delta is None:
        return np.ones_like(r)
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def huber_cost(r: np.ndarray, delta: float | None) -> float:
    if delta is None:
        return float(0.5 * r @ r)
    a = np.abs(r)
    return float(np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta)).sum())


def gauss_newton_step(cs: CorrespondenceSet, pose: Pose, delta: float | None, max_halvings: int = 8):
    """One IRLS Gauss-Newton step with weights frozen at ``pose``.

    Returns (new_pose, step6, frozen_cost_before, frozen_cost_after).
    """
    r, J = stacked_residuals(cs, pose)
    w = huber_weights(r, delta)
    H = J.T @ (w[:, None] * J)
    g = J.T @ (w * r)
    cost0 = float(0.5 * (w * r) @ r)
    # pseudo-inverse solve: directions the correspondences do not constrain
    # get no update instead of an arbitrarily large one
    ev, V = np.linalg.eigh(H)
    keep = ev > 1e-9 * max(ev.max(), 1e-300)
    step = -(V[:, keep] @ ((V[:, keep].T @ g) / ev[keep]))
    for _ in range(max_halvings + 1):
        cand = boxplus(pose, step)
        r1, _ = stacked_residuals(cs, cand)
        cost1 = float(0.5 * (w * r1) @ r1)
        if cost1 <= cost0:
            return cand, step, cost0, cost1
        step = 0.5 * step
    return pose, np.zeros(6), cost0, cost0


def match(features: FeatureScan, guess: Pose, maps, cfg: MatchConfig | None = None) -> MatchReport:
    """Register ``features`` (body frame) against ``maps``, starting at ``guess``.

    From the second iteration on, association is skipped when the previous
    step is smaller than ``skip_ratio`` times the convergence threshold.
    The residual gate switches on once a step falls below ``gate_after``;
    gating earlier would discard exactly the correspondences that still
    carry the unresolved part of the pose.
    """
    cfg = cfg or MatchConfig()
    thr = cfg.threshold
    pose = guess
    cs = None
    executed = skipped = 0
    res_norms, step_norms = [], []
    converged = False
    gate_on = cfg.gate_floor is None
    prev = None
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        reuse = (it >= 2 and cfg.skip_ratio > 1.0 and prev is not None
                 and prev < cfg.skip_ratio * thr)
        if reuse:
            skipped += 1
        else:
            cs = associate(features, pose, maps, cfg, gate=gate_on and cfg.gate_floor is not None)
            executed += 1
        if cs.n_valid < cfg.min_correspondences:
            raise DegenerateError(
                f"only {cs.n_valid} valid correspondences (need {cfg.min_correspondences})",
                ["pose"])
        pose, step, c0, c1 = gauss_newton_step(cs, pose, cfg.huber_delta, cfg.max_halvings)
        prev = twist_norm(Twist(step[:3], step[3:]), cfg.rot_weight)
        res_norms.append(float(np.sqrt(2.0 * c1)))
        step_norms.append(prev)
        if not gate_on and prev < cfg.gate_after:
            gate_on = True
            apply_gate(cs, pose, cfg.gate_floor, cfg.gate_scale)
            if cs.n_valid < cfg.min_correspondences:
                raise DegenerateError(f"only {cs.n_valid} correspondences survive the gate", ["pose"])
            continue
        if prev < thr:
            converged = True
            break
    r, _ = stacked_residuals(cs, pose)
    return MatchReport(pose, it, executed, skipped, huber_cost(r, cfg.huber_delta), res_norms,
                       converged, cs.n_valid_of(EDGE), cs.n_valid_of(PLANAR), step_norms)


# -- local map --------------------------------------------------------------------

class LocalMap:
    """Edge and planar trees around the current position.

    ``incremental=True`` inserts and box-deletes in place; otherwise the same
    logical content is kept in flat arrays and both trees are rebuilt from
    scratch after every update (the kd-tree baseline).
    """

    def __init__(self, voxel: float = 0.4, window: float = 30.0, incremental: bool = True,
                 balance_alpha: float = 0.6, deletion_alpha: float = 0.5):
        if window <= 0:
            raise ValueError("window must be positive")
        self.voxel = float(voxel)
        self.window = float(window)
        self.incremental = bool(incremental)
        kw = dict(balance_alpha=balance_alpha, deletion_alpha=deletion_alpha, voxel_size=self.voxel)
        self._kw = kw
        self.edge_tree = IkdTree(**kw)
        self.planar_tree = IkdTree(**kw)
        self._flat = [np.zeros((0, 3)), np.zeros((0, 3))]
        self.update_seconds = 0.0
        self.updates = 0

    def __len__(self) -> int:
        return len(self.edge_tree) + len(self.planar_tree)

    def box(self, position):
        half = 0.5 * self.window
        c = np.asarray(position, float)
        return c - half, c + half

    def _rebuild_one(self, which: int, new_pts, lo, hi) -> IkdTree:
        cur = self._flat[which]
        new_pts = np.asarray(new_pts, float).reshape(-1, 3)
        if len(new_pts):
            if self.voxel > 0:
                have = {tuple(k) for k in np.floor(cur / self.voxel).astype(np.int64)}
                keys = np.floor(new_pts / self.voxel).astype(np.int64)
            else:
                have = {tuple(k) for k in cur}
                keys = new_pts
            fresh = np.array([tuple(k) not in have for k in keys], dtype=bool)
            add = voxel_filter(new_pts[fresh], self.voxel)
            cur = np.vstack([cur, add])
        inside = np.all((cur >= lo) & (cur < hi), axis=1)
        cur = cur[inside]
        self._flat[which] = cur
        return IkdTree.build(cur, **self._kw)

    def update(self, world_edges, world_planars, position) -> None:
        """Insert world-frame features, then evict everything outside the window box."""
        t0 = time.perf_counter()
        lo, hi = self.box(position)
        if self.incremental:
            self.edge_tree.insert(world_edges)
            self.planar_tree.insert(world_planars)
            self.edge_tree.remove_outside(lo, hi)
            self.planar_tree.remove_outside(lo, hi)
        else:
            self.edge_tree = self._rebuild_one(0, world_edges, lo, hi)
            self.planar_tree = self._rebuild_one(1, world_planars, lo, hi)
        self.update_seconds += time.perf_counter() - t0
        self.updates += 1

    def stats(self) -> dict:
        return {"edge": self.edge_tree.stats(), "planar": self.planar_tree.stats(),
                "update_seconds": self.update_seconds, "updates": self.updates,
                "incremental": self.incremental}


def update_local_map(maps: LocalMap, features: FeatureScan, pose: Pose, window: float | None = None) -> LocalMap:
    """Insert ``features`` (body frame) at ``pose`` and evict outside the window box."""
    if window is not None:
        maps.window = float(window)
    w = features.transformed(pose)
    maps.update(w.edges, w.planars, pose.t)
    return maps
