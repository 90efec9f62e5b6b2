"""Incremental kd-tree with lazy deletion and partial rebuilds.

Any subtree whose larger child holds more than ``balance_alpha`` of its nodes,
or whose deleted share exceeds ``deletion_alpha``, is rebuilt from its live
points right after the mutation that broke the criterion. Rebuilds are
synchronous. Queries are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kdkernels as K


@dataclass
class KnnResult:
    points: np.ndarray      # (n, 3), nearest first
    sq_dists: np.ndarray    # (n,)

    def __len__(self) -> int:
        return len(self.sq_dists)


def voxel_filter(points: np.ndarray, voxel: float, occupied: set | None = None) -> np.ndarray:
    """First point per voxel wins, in input order; voxels in ``occupied`` are skipped."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return points
    if voxel <= 0.0:
        _, first = np.unique(points, axis=0, return_index=True)
        keep = np.sort(first)
        if occupied:
            keep = np.array([i for i in keep if tuple(points[i]) not in occupied], dtype=np.int64)
        return points[keep]
    keys = np.floor(points / voxel)
    _, first = np.unique(keys, axis=0, return_index=True)
    keep = np.sort(first)
    if occupied:
        keep = np.array([i for i in keep if tuple(keys[i]) not in occupied], dtype=np.int64)
    return points[keep]


class IkdTree:
    """Exact k-NN index over 3-D points supporting incremental updates.

    Mutations must be serialized by the caller; concurrent queries are fine.
    """

    def __init__(self, balance_alpha: float = 0.6, deletion_alpha: float = 0.5,
                 voxel_size: float = 0.0, capacity: int = 1024):
        if not (0.0 < balance_alpha < 1.0 and 0.0 < deletion_alpha < 1.0):
            raise ValueError("alphas must lie in (0, 1)")
        if balance_alpha < 0.5:
            raise ValueError("balance_alpha below 0.5 cannot be satisfied")
        self.balance_alpha = float(balance_alpha)
        self.deletion_alpha = float(deletion_alpha)
        self.voxel_size = float(voxel_size)
        self._alloc_arrays(max(int(capacity), 16))

    def _alloc_arrays(self, cap: int) -> None:
        self.pt = np.zeros((cap, 3))
        self.lc = np.full(cap, -1, np.int64)
        self.rc = np.full(cap, -1, np.int64)
        self.par = np.full(cap, -1, np.int64)
        self.ax = np.zeros(cap, np.int64)
        self.sz = np.zeros(cap, np.int64)
        self.nd = np.zeros(cap, np.int64)
        self.dl = np.zeros(cap, np.bool_)
        self.lo = np.full((cap, 3), np.inf)
        self.hi = np.full((cap, 3), -np.inf)
        self.dirty = np.zeros(cap, np.uint8)
        self.free = np.zeros(cap, np.int64)
        self.meta = np.array([-1, 0, 0, 0], np.int64)

    def _reserve(self, extra: int) -> None:
        need = int(self.meta[K.NALLOC]) + int(extra)
        cap = len(self.pt)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("pt", "lo", "hi"):
            old = getattr(self, name)
            fill = 0.0 if name == "pt" else (np.inf if name == "lo" else -np.inf)
            arr = np.full((new, 3), fill)
            arr[:cap] = old
            setattr(self, name, arr)
        for name, fill, dt in (("lc", -1, np.int64), ("rc", -1, np.int64), ("par", -1, np.int64),
                               ("ax", 0, np.int64), ("sz", 0, np.int64), ("nd", 0, np.int64),
                               ("dl", False, np.bool_), ("dirty", 0, np.uint8), ("free", 0, np.int64)):
            old = getattr(self, name)
            arr = np.full(new, fill, dt)
            arr[:cap] = old
            setattr(self, name, arr)

    @property
    def _arrays(self):
        return (self.pt, self.lc, self.rc, self.par, self.ax, self.sz, self.nd, self.dl,
                self.lo, self.hi, self.dirty, self.meta, self.free)

    # -- construction -----------------------------------------------------------------

    @classmethod
    def build(cls, points=(), **kwargs) -> "IkdTree":
        tree = cls(**kwargs)
        tree.rebuild_from(points)
        return tree

    def rebuild_from(self, points) -> None:
        """Discard the current contents and build a balanced tree over ``points``."""
        pts = voxel_filter(np.asarray(points, dtype=float).reshape(-1, 3), self.voxel_size)
        self._alloc_arrays(max(2 * len(pts), 16))
        n = len(pts)
        if n == 0:
            return
        self.meta[K.NALLOC] = n
        slots = np.arange(n, dtype=np.int64)
        K._build_into(np.ascontiguousarray(pts), slots, -1, -1, self.pt, self.lc, self.rc,
                      self.par, self.ax, self.sz, self.nd, self.dl, self.lo, self.hi,
                      self.dirty, self.meta)

    # -- mutation ---------------------------------------------------------------------

    def insert(self, points) -> int:
        """Insert points one by one; returns how many were actually added."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        if len(pts) == 0:
            return 0
        self._reserve(len(pts))
        return int(K.insert_points(pts, self.voxel_size, *self._arrays,
                                   self.balance_alpha, self.deletion_alpha))

    def remove(self, points, tol: float = 1e-6) -> int:
        """Lazily delete live points within ``tol`` (per axis); returns the count."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        if len(pts) == 0:
            return 0
        return int(K.delete_points(pts, float(tol), *self._arrays,
                                   self.balance_alpha, self.deletion_alpha))

    def remove_box(self, lo, hi) -> int:
        """Delete live points with ``lo <= p < hi`` on every axis."""
        lo = np.asarray(lo, dtype=float).reshape(3)
        hi = np.asarray(hi, dtype=float).reshape(3)
        return int(K.delete_box(lo, hi, *self._arrays, self.balance_alpha, self.deletion_alpha))

    def remove_outside(self, lo, hi) -> int:
        """Delete everything outside the half-open box [lo, hi)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        removed = 0
        for a in range(3):
            blo = np.full(3, -np.inf)
            bhi = np.full(3, np.inf)
            bhi[a] = lo[a]
            removed += self.remove_box(blo, bhi)
            blo = np.full(3, -np.inf)
            blo[a] = hi[a]
            removed += self.remove_box(blo, np.full(3, np.inf))
        return removed

    # -- queries ----------------------------------------------------------------------

    def knn(self, query, k: int = 5, max_dist: float = np.inf) -> KnnResult:
        idx, d2, cnt = self.knn_batch(np.asarray(query, dtype=float).reshape(1, 3), k, max_dist)
        n = int(cnt[0])
        return KnnResult(self.pt[idx[0, :n]].copy(), d2[0, :n].copy())

    def knn_batch(self, queries, k: int = 5, max_dist: float = np.inf):
        """Slot indices (m, k), squared distances (m, k) and per-query counts."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not max_dist > 0:
            raise ValueError("max_dist must be > 0")
        q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 3))
        max_d2 = float(max_dist) ** 2 if np.isfinite(max_dist) else np.inf
        return K.knn_batch(q, int(k), max_d2, self.pt, self.lc, self.rc, self.dl,
                           self.lo, self.hi, self.meta)

    def points_of(self, idx) -> np.ndarray:
        return self.pt[idx]

    # -- inspection -------------------------------------------------------------------

    @property
    def root(self) -> int:
        return int(self.meta[K.ROOT])

    def __len__(self) -> int:
        r = self.root
        return 0 if r < 0 else int(self.sz[r] - self.nd[r])

    @property
    def node_count(self) -> int:
        r = self.root
        return 0 if r < 0 else int(self.sz[r])

    @property
    def deleted_count(self) -> int:
        r = self.root
        return 0 if r < 0 else int(self.nd[r])

    @property
    def rebuild_count(self) -> int:
        return int(self.meta[K.NREBUILD])

    def live_points(self) -> np.ndarray:
        out = []
        stack = [self.root] if self.root >= 0 else []
        while stack:
            n = stack.pop()
            if not self.dl[n]:
                out.append(self.pt[n])
            for c in (self.lc[n], self.rc[n]):
                if c >= 0:
                    stack.append(int(c))
        return np.array(out).reshape(-1, 3)

    def depth(self) -> int:
        if self.root < 0:
            return 0
        best = 0
        stack = [(self.root, 1)]
        while stack:
            n, d = stack.pop()
            best = max(best, d)
            for c in (self.lc[n], self.rc[n]):
                if c >= 0:
                    stack.append((int(c), d + 1))
        return best

    def stats(self) -> dict:
        return {"size": len(self), "nodes": self.node_count, "depth": self.depth(),
                "deleted": self.deleted_count, "rebuilds": self.rebuild_count}

    def stats_json(self) -> str:
        return json.dumps(self.stats(), sort_keys=True)

    def check_invariants(self) -> None:
        """Full traversal; raises AssertionError on any broken invariant."""
        if self.root < 0:
            return
        assert self.par[self.root] == -1

        def visit(n):
            # returns (size, deleted, points)
            size, deleted = 1, int(self.dl[n])
            pts = [self.pt[n]]
            child_sizes = []
            for side, c in ((0, self.lc[n]), (1, self.rc[n])):
                if c < 0:
                    child_sizes.append(0)
                    continue
                assert self.par[c] == n, "parent link"
                s, d, p = visit(int(c))
                p = np.asarray(p)
                a = self.ax[n]
                if side == 0:
                    assert np.all(p[:, a] <= self.pt[n, a]), "left subtree ordering"
                else:
                    assert np.all(p[:, a] >= self.pt[n, a]), "right subtree ordering"
                size += s
                deleted += d
                pts.extend(p)
                child_sizes.append(s)
            assert self.sz[n] == size, "subtree size"
            assert self.nd[n] == deleted, "deleted count"
            assert max(child_sizes) <= self.balance_alpha * size, "balance criterion"
            assert deleted <= self.deletion_alpha * size, "deletion criterion"
            return size, deleted, pts

        import sys
        sys.setrecursionlimit(max(sys.getrecursionlimit(), 10000))
        visit(self.root)
