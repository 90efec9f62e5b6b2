"""TUM trajectory files: ``stamp tx ty tz qx qy qz qw`` with 9 decimals."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import Pose, StampedPose


class TumError(ValueError):
    pass


def format_rows(table: np.ndarray) -> str:
    return "".join(" ".join(f"{v:.9f}" for v in row) + "\n" for row in table)


def parse_rows(text: str, name: str = "<tum>") -> np.ndarray:
    rows = []
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise TumError(f"{name}:{i}: expected 8 columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise TumError(f"{name}:{i}: non-numeric value") from None
    return np.array(rows, dtype=float).reshape(-1, 8)


def poses_to_rows(poses) -> np.ndarray:
    return np.array([[p.stamp, *p.pose.t, *p.pose.q] for p in poses], dtype=float).reshape(-1, 8)


def rows_to_poses(table: np.ndarray) -> list:
    return [StampedPose(float(r[0]), Pose(r[4:8], r[1:4])) for r in table]


def write_tum(path, poses) -> None:
    Path(path).write_text(format_rows(poses_to_rows(poses)))


def read_tum(path) -> list:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"trajectory file {p} not found")
    return rows_to_poses(parse_rows(p.read_text(), str(p)))
