"""Point cloud container shared by the LiDAR modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PointCloud:
    """Columns follow the PCD layout used on disk: x y z intensity ring time."""

    xyz: np.ndarray
    intensity: np.ndarray = None
    ring: np.ndarray = None
    time: np.ndarray = None
    stamp: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        n = len(self.xyz)
        if self.intensity is None:
            self.intensity = np.zeros(n)
        if self.ring is None:
            self.ring = np.full(n, -1, dtype=np.int64)
        if self.time is None:
            self.time = np.zeros(n)
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(n)
        self.ring = np.asarray(self.ring, dtype=np.int64).reshape(n)
        self.time = np.asarray(self.time, dtype=float).reshape(n)

    def __len__(self) -> int:
        return len(self.xyz)

    def select(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], self.intensity[idx], self.ring[idx],
                          self.time[idx], self.stamp, dict(self.meta))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


def as_xyz(scan) -> np.ndarray:
    if isinstance(scan, PointCloud):
        return scan.xyz
    return np.asarray(scan, dtype=float).reshape(-1, 3)
