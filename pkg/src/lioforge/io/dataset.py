"""On-disk dataset layout written by ``simulate`` and read by ``run``/``bench``.

    scans/000000.pcd ...   one PCD per scan (stamp in a header comment)
    imu.csv                stamp, gyro xyz, accel xyz (repr floats, lossless)
    tracks.jsonl           one line per frame: {"frame", "stamp", "obs": [[id, cam, lm, x, y], ...]}
    truth.tum              ground-truth body poses at the scan stamps
    rig.json, beam.json    camera rig and LiDAR beam model (angles in radians)
    scenario.json          the scenario that produced the data (if any)
    manifest.json          seed, counts and sha256 per file
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..range_image import BeamModel
from ..simulation import ImuStream
from ..vio.camera import CameraRig
from .config import to_dict
from .pcd import read_pcd, write_pcd
from .tum import read_tum, write_tum

IMU_HEADER = ["stamp", "gx", "gy", "gz", "ax", "ay", "az"]


class DatasetError(ValueError):
    pass


@dataclass
class LoadedDataset:
    stamps: np.ndarray
    scans: list
    imu: ImuStream
    frames: list
    rig: CameraRig
    truth: list
    model: BeamModel
    manifest: dict


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def beam_to_dict(model: BeamModel) -> dict:
    return {"vertical_angles": list(model.vertical_angles),
            "horizontal_resolution": model.horizontal_resolution, "max_range": model.max_range}


def beam_from_dict(d: dict) -> BeamModel:
    return BeamModel(tuple(d["vertical_angles"]), d["horizontal_resolution"], d["max_range"])


def write_dataset(data, out_dir, binary: bool = True) -> dict:
    """Write ``data`` under ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    files = []
    for k, scan in enumerate(data.scans):
        name = f"scans/{k:06d}.pcd"
        write_pcd(out / name, scan, binary=binary)
        files.append(name)

    imu = data.imu
    with open(out / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_HEADER)
        for t, g, a in zip(imu.stamps, imu.gyro, imu.accel):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in (*g, *a)])
    files.append("imu.csv")

    with open(out / "tracks.jsonl", "w") as fh:
        for k, obs in enumerate(data.frames):
            rows = [[int(tid), int(c), int(lm), float(xy[0]), float(xy[1])]
                    for tid, (c, lm, xy) in sorted(obs.items())]
            fh.write(json.dumps({"frame": k, "stamp": float(data.stamps[k]), "obs": rows}) + "\n")
    files.append("tracks.jsonl")

    write_tum(out / "truth.tum", data.truth)
    files.append("truth.tum")
    _dump_json(out / "rig.json", data.rig.to_dict())
    _dump_json(out / "beam.json", beam_to_dict(data.model))
    files += ["rig.json", "beam.json"]
    scn = getattr(data, "scenario", None)
    if scn is not None:
        _dump_json(out / "scenario.json", to_dict(scn))
        files.append("scenario.json")

    manifest = {"seed": getattr(scn, "seed", None), "n_scans": len(data.scans),
                "n_imu": int(len(imu.stamps)),
                "n_observations": int(sum(len(f) for f in data.frames)),
                "cameras": data.rig.names,
                "files": {f: _sha256(out / f) for f in files}}
    _dump_json(out / "manifest.json", manifest)
    return manifest


def _need(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} not found")
    return path


def read_imu(path) -> ImuStream:
    path = _need(Path(path))
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != IMU_HEADER:
            raise DatasetError(f"{path}:1: expected header {','.join(IMU_HEADER)}")
        rows = []
        for i, row in enumerate(r, 2):
            if len(row) != 7:
                raise DatasetError(f"{path}:{i}: expected 7 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DatasetError(f"{path}:{i}: non-numeric value") from None
    a = np.array(rows, dtype=float).reshape(-1, 7)
    if len(a) > 1 and np.any(np.diff(a[:, 0]) <= 0):
        raise DatasetError(f"{path}: IMU stamps must be strictly increasing")
    z = np.zeros((len(a), 3))
    return ImuStream(a[:, 0].copy(), a[:, 1:4].copy(), a[:, 4:7].copy(), z, z.copy())


def read_tracks(path) -> list:
    path = _need(Path(path))
    frames = []
    for i, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            obs = {int(tid): (int(c), int(lm), np.array([x, y], dtype=float))
                   for tid, c, lm, x, y in rec["obs"]}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{i}: bad track record ({exc})") from None
        frames.append(obs)
    return frames


def load_dataset(in_dir) -> LoadedDataset:
    d = Path(in_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} not found")
    manifest = json.loads(_need(d / "manifest.json").read_text())
    scan_files = sorted((d / "scans").glob("*.pcd")) if (d / "scans").is_dir() else []
    if not scan_files:
        raise FileNotFoundError(f"no scans under {d / 'scans'}")
    scans = [read_pcd(p) for p in scan_files]
    truth = read_tum(d / "truth.tum")
    stamps = np.array([s.stamp for s in scans], dtype=float)
    if len(truth) != len(scans):
        raise DatasetError(f"{len(scans)} scans but {len(truth)} truth poses")
    # truth stamps carry 9 decimals; the scan headers keep the full value
    if np.any(np.abs(stamps - np.array([p.stamp for p in truth])) > 1e-6):
        raise DatasetError("scan stamps and truth stamps disagree")
    frames = read_tracks(d / "tracks.jsonl")
    if len(frames) != len(scans):
        raise DatasetError(f"{len(scans)} scans but {len(frames)} track frames")
    rig = CameraRig.from_dict(json.loads(_need(d / "rig.json").read_text()))
    model = beam_from_dict(json.loads(_need(d / "beam.json").read_text()))
    imu = read_imu(d / "imu.csv")
    if not math.isfinite(stamps.sum()):
        raise DatasetError("non-finite scan stamps")
    return LoadedDataset(stamps, scans, imu, frames, rig, truth, model, manifest)


def verify_manifest(in_dir) -> list:
    """Files whose hash no longer matches the manifest."""
    d = Path(in_dir)
    manifest = json.loads(_need(d / "manifest.json").read_text())
    return [f for f, h in manifest["files"].items()
            if not (d / f).exists() or _sha256(d / f) != h]
