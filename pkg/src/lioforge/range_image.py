"""Range-image projection and depth-angle clustering for LiDAR noise removal.

Two neighbouring returns (same ring, adjacent columns; or adjacent rings, same
column) are joined when the angle between the line connecting them and the
beam of the farther point exceeds a threshold. Connected components of that
graph are the clusters; tiny components are treated as noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import PointCloud, as_xyz

INVALID = -1
NOISE = -2


@dataclass(frozen=True)
class BeamModel:
    vertical_angles: tuple
    horizontal_resolution: float
    max_range: float = 100.0

    def __post_init__(self):
        va = np.asarray(self.vertical_angles, dtype=float)
        if va.ndim != 1 or len(va) < 1:
            raise ValueError("vertical_angles must be a non-empty list")
        if len(va) > 1 and not (np.all(np.diff(va) > 0) or np.all(np.diff(va) < 0)):
            raise ValueError("vertical_angles must be strictly monotonic")
        if self.horizontal_resolution <= 0:
            raise ValueError("horizontal_resolution must be > 0")
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        object.__setattr__(self, "vertical_angles", tuple(float(a) for a in va))

    @classmethod
    def uniform(cls, n_rings: int, min_deg: float, max_deg: float,
                h_res_deg: float, max_range: float = 100.0) -> "BeamModel":
        angles = np.deg2rad(np.linspace(min_deg, max_deg, n_rings))
        return cls(tuple(angles), math.radians(h_res_deg), max_range)

    @property
    def rows(self) -> int:
        return len(self.vertical_angles)

    @property
    def cols(self) -> int:
        return int(round(2.0 * math.pi / self.horizontal_resolution))

    def column_azimuths(self) -> np.ndarray:
        return np.arange(self.cols) * (2.0 * math.pi / self.cols)

    def to_dict(self) -> dict:
        return {"vertical_angles_deg": [math.degrees(a) for a in self.vertical_angles],
                "horizontal_resolution_deg": math.degrees(self.horizontal_resolution),
                "max_range": self.max_range}

    @classmethod
    def from_dict(cls, d: dict) -> "BeamModel":
        return cls(tuple(math.radians(a) for a in d["vertical_angles_deg"]),
                   math.radians(d["horizontal_resolution_deg"]), d["max_range"])


@dataclass
class RangeImage:
    ranges: np.ndarray          # (rows, cols); 0.0 marks an INVALID cell
    index: np.ndarray           # (rows, cols) point index, INVALID where empty
    model: BeamModel
    dropped_fov: int = 0
    dropped_range: int = 0
    degenerate: int = 0
    collisions: int = 0

    @property
    def valid(self) -> np.ndarray:
        return self.index != INVALID

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass
class ClusterLabels:
    labels: np.ndarray          # (rows, cols) cluster id >= 0, NOISE or INVALID
    cluster_sizes: dict
    ring_spans: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)


@dataclass
class RemovalReport:
    input_points: int
    output_points: int
    clusters: int
    removed: int
    unprojected: int = 0
    cluster_sizes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"input_points": self.input_points, "output_points": self.output_points,
                "clusters": self.clusters, "removed": self.removed,
                "unprojected": self.unprojected,
                "cluster_sizes": {str(k): v for k, v in self.cluster_sizes.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _ring_bounds(va: np.ndarray) -> tuple[float, float]:
    if len(va) == 1:
        half = math.radians(1.0)
        return va[0] - half, va[0] + half
    lo, hi = (va[0], va[-1]) if va[0] < va[-1] else (va[-1], va[0])
    s = np.sort(va)
    return lo - 0.5 * (s[1] - s[0]), hi + 0.5 * (s[-1] - s[-2])


def project(scan, model: BeamModel) -> RangeImage:
    """Project a sensor-frame scan onto the (ring, azimuth) grid."""
    xyz = as_xyz(scan)
    rows, cols = model.rows, model.cols
    ranges = np.zeros((rows, cols))
    index = np.full((rows, cols), INVALID, dtype=np.int64)
    img = RangeImage(ranges, index, model)
    if len(xyz) == 0:
        return img

    rng = np.linalg.norm(xyz, axis=1)
    ok = rng > 0.0
    img.degenerate = int(np.count_nonzero(~ok))
    in_range = rng <= model.max_range
    img.dropped_range = int(np.count_nonzero(ok & ~in_range))
    ok &= in_range

    va = np.asarray(model.vertical_angles)
    safe = np.where(ok, rng, 1.0)
    elev = np.arcsin(np.clip(xyz[:, 2] / safe, -1.0, 1.0))
    lo, hi = _ring_bounds(va)
    in_fov = (elev >= lo) & (elev <= hi)
    img.dropped_fov = int(np.count_nonzero(ok & ~in_fov))
    ok &= in_fov

    idx = np.flatnonzero(ok)
    row = np.argmin(np.abs(elev[idx, None] - va[None, :]), axis=1)
    az = np.mod(np.arctan2(xyz[idx, 1], xyz[idx, 0]), 2.0 * math.pi)
    col = np.mod(np.rint(az / (2.0 * math.pi / cols)).astype(np.int64), cols)

    # nearer point wins: write far-to-near so the last write is the nearest
    order = np.lexsort((-rng[idx], row * cols + col))
    cell = (row * cols + col)[order]
    winner = np.ones(len(order), dtype=bool)
    winner[:-1] = cell[1:] != cell[:-1]
    img.collisions = int(len(order) - np.count_nonzero(winner))
    chosen = idx[order][winner]
    cells = cell[winner]
    ranges.ravel()[cells] = rng[chosen]
    index.ravel()[cells] = chosen
    return img


def neighbor_angle(d1: float, d2: float, alpha: float) -> float:
    """Angle between the beam of the farther return and the line to its neighbour."""
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValueError("depths must be positive")
    if d2 > d1:
        d1, d2 = d2, d1
    g = math.atan2(d2 * math.sin(alpha), d1 - d2 * math.cos(alpha))
    return min(max(g, 0.0), 0.5 * math.pi)


def neighbor_angles(d_a: np.ndarray, d_b: np.ndarray, alpha) -> np.ndarray:
    """Vectorised ``neighbor_angle``; callers guarantee positive depths."""
    d1 = np.maximum(d_a, d_b)
    d2 = np.minimum(d_a, d_b)
    g = np.arctan2(d2 * np.sin(alpha), d1 - d2 * np.cos(alpha))
    return np.clip(g, 0.0, 0.5 * math.pi)


def adjacency(img: RangeImage, theta: float):
    """Edge list (flat cell ids) of neighbour pairs joined by the angle test."""
    rows, cols = img.ranges.shape
    r = img.ranges
    v = img.valid
    flat = np.arange(rows * cols).reshape(rows, cols)
    src, dst = [], []

    # horizontal, wrapping around in azimuth
    if cols > 1:
        rr = np.roll(r, -1, axis=1)
        vv = v & np.roll(v, -1, axis=1)
        alpha = img.model.horizontal_resolution
        g = np.zeros_like(r)
        g[vv] = neighbor_angles(r[vv], rr[vv], alpha)
        m = vv & (g >= theta)
        src.append(flat[m])
        dst.append(np.roll(flat, -1, axis=1)[m])

    if rows > 1:
        va = np.asarray(img.model.vertical_angles)
        gap = np.abs(np.diff(va))[:, None] * np.ones((1, cols))
        vv = v[:-1] & v[1:]
        g = np.zeros((rows - 1, cols))
        g[vv] = neighbor_angles(r[:-1][vv], r[1:][vv], gap[vv])
        m = vv & (g >= theta)
        src.append(flat[:-1][m])
        dst.append(flat[1:][m])

    if not src:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def cluster(img: RangeImage, model: BeamModel = None, theta: float = math.radians(10.0)) -> ClusterLabels:
    """Connected components of the angle graph; ids assigned in row-major seed order."""
    if not 0.0 < theta < 0.5 * math.pi:
        raise ValueError("theta must lie in (0, pi/2)")
    if model is not None and model is not img.model:
        img = RangeImage(img.ranges, img.index, model)
    rows, cols = img.ranges.shape
    n = rows * cols
    labels = np.full((rows, cols), INVALID, dtype=np.int64)
    valid = img.valid.ravel()
    if not valid.any():
        return ClusterLabels(labels, {}, {})

    src, dst = adjacency(img, theta)
    g = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    _, comp = connected_components(g, directed=False)

    cells = np.flatnonzero(valid)
    comp_v = comp[cells]
    # renumber components by their first (row-major) cell
    _, first = np.unique(comp_v, return_index=True)
    order = np.argsort(first)
    remap = np.empty(comp.max() + 1, dtype=np.int64)
    remap[np.unique(comp_v)[order]] = np.arange(len(order))
    lab = remap[comp_v]
    labels.ravel()[cells] = lab

    sizes = np.bincount(lab)
    ring_of = cells // cols
    # distinct rings per cluster
    pairs = np.unique(lab * rows + ring_of)
    span_counts = np.bincount(pairs // rows, minlength=len(sizes))
    spans = {int(i): int(s) for i, s in enumerate(span_counts)}
    return ClusterLabels(labels, {int(i): int(s) for i, s in enumerate(sizes)}, spans)


def remove_noise(scan, labels: ClusterLabels, min_cluster: int = 30,
                 img: RangeImage = None, min_ring_span: int | None = 3):
    """Keep points whose cluster is large enough (or spans enough rings).

    ``img`` must be the range image the labels were computed from; when
    omitted, the scan is re-projected using the model stored in ``meta``.
    Points that never made it into the image (out of FoV, lost a cell
    collision) are dropped and counted as ``unprojected``.
    Returns ``(filtered_scan, report)``.
    """
    xyz = as_xyz(scan)
    n_in = len(xyz)
    if n_in == 0:
        return scan, RemovalReport(0, 0, 0, 0)
    if img is None:
        raise ValueError("remove_noise needs the range image used for clustering")

    lab = labels.labels.ravel()
    idx = img.index.ravel()
    cells = np.flatnonzero(lab >= 0)
    sizes = np.zeros(max(labels.cluster_sizes, default=-1) + 1, dtype=np.int64)
    spans = np.zeros_like(sizes)
    for k, s in labels.cluster_sizes.items():
        sizes[k] = s
        spans[k] = labels.ring_spans.get(k, 1)
    keep_cluster = sizes >= min_cluster
    if min_ring_span is not None:
        keep_cluster |= spans >= min_ring_span
    keep_cells = cells[keep_cluster[lab[cells]]]
    keep_idx = np.sort(idx[keep_cells])

    n_proj = len(cells)
    report = RemovalReport(
        input_points=n_in,
        output_points=len(keep_idx),
        clusters=labels.n_clusters,
        removed=n_proj - len(keep_idx),
        unprojected=n_in - n_proj,
        cluster_sizes=dict(labels.cluster_sizes),
    )
    if isinstance(scan, PointCloud):
        return scan.select(keep_idx), report
    return xyz[keep_idx], report


def mark_noise(labels: ClusterLabels, min_cluster: int, min_ring_span: int | None = 3) -> ClusterLabels:
    """Copy of ``labels`` with rejected clusters relabelled NOISE."""
    out = labels.labels.copy()
    for k, s in labels.cluster_sizes.items():
        span_ok = min_ring_span is not None and labels.ring_spans.get(k, 1) >= min_ring_span
        if s < min_cluster and not span_ok:
            out[out == k] = NOISE
    return ClusterLabels(out, dict(labels.cluster_sizes), dict(labels.ring_spans))


def denoise(scan, model: BeamModel, theta: float = math.radians(10.0), min_cluster: int = 30,
            min_ring_span: int | None = 3):
    """project -> cluster -> remove_noise in one call."""
    img = project(scan, model)
    labels = cluster(img, model, theta)
    return remove_noise(scan, labels, min_cluster, img=img, min_ring_span=min_ring_span)


def write_pgm(img: RangeImage, path) -> None:
    """16-bit binary PGM, one count per millimetre, clipped at 65.535 m."""
    mm = np.clip(np.rint(img.ranges * 1000.0), 0, 65535).astype(">u2")
    rows, cols = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def read_pgm(path) -> np.ndarray:
    """Ranges in metres from a PGM written by ``write_pgm``."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = (int(x) for x in parts[1].split())
    arr = np.frombuffer(parts[3], dtype=">u2").reshape(rows, cols)
    return arr.astype(float) / 1000.0
