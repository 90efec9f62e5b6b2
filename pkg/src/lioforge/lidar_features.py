"""Edge / planar feature selection from per-ring smoothness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, as_xyz
from .range_image import BeamModel, RangeImage, project


@dataclass
class FeatureConfig:
    # smoothness is normalised by window size and range, so these are
    # dimensionless and roughly proportional to the azimuth step
    edge_threshold: float = 0.005
    planar_threshold: float = 0.001
    half_window: int = 5
    max_edges: int = 2
    n_sectors: int = 6
    suppress_radius: int = 5
    planar_voxel: float = 0.4
    occlusion_jump: float = 0.3
    parallel_ratio: float = 0.02
    occlusion_guard: bool = True

    def __post_init__(self):
        if self.half_window < 1:
            raise ValueError("half_window must be >= 1")
        if self.planar_threshold > self.edge_threshold:
            raise ValueError("planar_threshold must not exceed edge_threshold")


@dataclass
class FeatureScan:
    edges: np.ndarray
    planars: np.ndarray
    stamp: float = 0.0
    edge_ring: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    edge_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    planar_ring: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    planar_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    edge_source: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    planar_source: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @classmethod
    def empty(cls, stamp: float = 0.0) -> "FeatureScan":
        z = np.zeros((0, 3))
        return cls(z, z.copy(), stamp)

    @property
    def n_points(self) -> int:
        return len(self.edges) + len(self.planars)

    def transformed(self, pose) -> "FeatureScan":
        return FeatureScan(pose.apply(self.edges).reshape(-1, 3),
                           pose.apply(self.planars).reshape(-1, 3), self.stamp,
                           self.edge_ring, self.edge_index, self.planar_ring,
                           self.planar_index, self.edge_source, self.planar_source)

    def to_cloud(self) -> PointCloud:
        """Class encoded in the intensity channel: 1 = edge, 2 = planar."""
        xyz = np.vstack([self.edges, self.planars])
        inten = np.concatenate([np.ones(len(self.edges)), np.full(len(self.planars), 2.0)])
        ring = np.concatenate([self.edge_ring, self.planar_ring]).astype(np.int64)
        if len(ring) != len(xyz):
            ring = None
        return PointCloud(xyz, inten, ring, None, self.stamp)

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "FeatureScan":
        e = cloud.intensity == 1
        p = cloud.intensity == 2
        return cls(cloud.xyz[e], cloud.xyz[p], cloud.stamp, cloud.ring[e], None, cloud.ring[p])


def smoothness(ring, i: int, half_window: int) -> float:
    """Norm of summed neighbour offsets, normalised by window size and range."""
    ring = np.asarray(ring, dtype=float)
    n = len(ring)
    if i < half_window or i > n - half_window - 1:
        raise IndexError(f"window of half-size {half_window} around {i} leaves the ring (n={n})")
    win = ring[i - half_window:i + half_window + 1]
    s = win.sum(axis=0) - (2 * half_window + 1) * ring[i]
    return float(np.linalg.norm(s) / (2 * half_window * np.linalg.norm(ring[i])))


def ring_smoothness(pts: np.ndarray, half_window: int) -> np.ndarray:
    """Smoothness for every point of an ordered ring; NaN where the window does not fit."""
    n = len(pts)
    out = np.full(n, np.nan)
    if n < 2 * half_window + 1:
        return out
    cs = np.vstack([np.zeros((1, 3)), np.cumsum(pts, axis=0)])
    w = 2 * half_window + 1
    sums = cs[w:] - cs[:-w]
    centre = pts[half_window:n - half_window]
    s = sums - w * centre
    out[half_window:n - half_window] = (np.linalg.norm(s, axis=1)
                                        / (2 * half_window * np.linalg.norm(centre, axis=1)))
    return out


def _occluded(rng: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    n = len(rng)
    bad = np.zeros(n, dtype=bool)
    if n < 2:
        return bad
    hw = cfg.half_window
    d = rng[1:] - rng[:-1]
    for i in np.flatnonzero(d < -cfg.occlusion_jump):
        bad[max(0, i - hw):i + 1] = True          # i is farther: its side is occluded
    for i in np.flatnonzero(d > cfg.occlusion_jump):
        bad[i + 1:i + 2 + hw] = True
    if n >= 3:
        d1 = np.abs(rng[1:-1] - rng[:-2])
        d2 = np.abs(rng[2:] - rng[1:-1])
        par = (d1 > cfg.parallel_ratio * rng[1:-1]) & (d2 > cfg.parallel_ratio * rng[1:-1])
        bad[1:-1] |= par
    return bad


def extract(scan, model: BeamModel, cfg: FeatureConfig | None = None,
            image: RangeImage | None = None, stamp: float | None = None) -> FeatureScan:
    """Per-ring, per-sector edge and planar selection.

    ``image`` lets callers fix the ring ordering (the point coordinates are
    always read from ``scan``).
    """
    cfg = cfg or FeatureConfig()
    xyz = as_xyz(scan)
    if stamp is None:
        stamp = scan.stamp if isinstance(scan, PointCloud) else 0.0
    if len(xyz) == 0:
        return FeatureScan.empty(stamp)
    img = image if image is not None else project(xyz, model)
    cols = img.index.shape[1]

    e_src, e_ring, e_col = [], [], []
    p_src, p_ring, p_col = [], [], []
    for r in range(img.index.shape[0]):
        row_cols = np.flatnonzero(img.index[r] >= 0)
        if len(row_cols) < 2 * cfg.half_window + 1:
            continue
        src = img.index[r, row_cols]
        pts = xyz[src]
        c = ring_smoothness(pts, cfg.half_window)
        rng = np.linalg.norm(pts, axis=1)
        blocked = _occluded(rng, cfg) if cfg.occlusion_guard else np.zeros(len(pts), bool)
        picked = np.zeros(len(pts), dtype=bool)
        sector = row_cols * cfg.n_sectors // cols
        has_c = ~np.isnan(c)
        # edges: strongest first across the ring, capped per sector, so that a
        # sector boundary cannot hand the pick to a weaker neighbour
        cand = np.flatnonzero(has_c & (c > cfg.edge_threshold))
        count = np.zeros(cfg.n_sectors, dtype=np.int64)
        for k in cand[np.lexsort((cand, -c[cand]))]:
            if picked[k] or blocked[k] or count[sector[k]] >= cfg.max_edges:
                continue
            e_src.append(src[k])
            e_ring.append(r)
            e_col.append(row_cols[k])
            count[sector[k]] += 1
            lo = max(0, k - cfg.suppress_radius)
            picked[lo:k + cfg.suppress_radius + 1] = True
        for k in np.flatnonzero(has_c & (c < cfg.planar_threshold)):
            p_src.append(src[k])
            p_ring.append(r)
            p_col.append(row_cols[k])

    e_src = np.asarray(e_src, dtype=np.int64)
    p_src = np.asarray(p_src, dtype=np.int64)
    edges = xyz[e_src].reshape(-1, 3)
    planars = xyz[p_src].reshape(-1, 3)
    p_ring = np.asarray(p_ring, dtype=np.int64)
    p_col = np.asarray(p_col, dtype=np.int64)
    if cfg.planar_voxel > 0 and len(planars):
        keys = np.floor(planars / cfg.planar_voxel)
        _, first = np.unique(keys, axis=0, return_index=True)
        keep = np.sort(first)
        planars, p_src, p_ring, p_col = planars[keep], p_src[keep], p_ring[keep], p_col[keep]
    return FeatureScan(edges, planars, stamp, np.asarray(e_ring, np.int64),
                       np.asarray(e_col, np.int64), p_ring, p_col, e_src, p_src)
