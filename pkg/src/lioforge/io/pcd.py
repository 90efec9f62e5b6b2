"""PCD v0.7 reader / writer for ``x y z intensity ring time`` clouds (ASCII or binary)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..cloud import PointCloud

_TYPES = {("F", 4): "f4", ("F", 8): "f8", ("U", 1): "u1", ("U", 2): "u2", ("U", 4): "u4",
          ("U", 8): "u8", ("I", 1): "i1", ("I", 2): "i2", ("I", 4): "i4", ("I", 8): "i8"}
# what the writer emits: doubles keep the coordinates lossless
_WRITE = {"x": ("F", 8), "y": ("F", 8), "z": ("F", 8), "intensity": ("F", 8),
          "ring": ("I", 2), "time": ("F", 8)}


class PcdError(ValueError):
    pass


def _fields_of(cloud: PointCloud) -> list:
    names = ["x", "y", "z", "intensity"]
    if cloud.ring is not None:
        names.append("ring")
    if cloud.time is not None:
        names.append("time")
    return names


def _columns(cloud: PointCloud, names) -> dict:
    n = len(cloud)
    cols = {"x": cloud.xyz[:, 0], "y": cloud.xyz[:, 1], "z": cloud.xyz[:, 2],
            "intensity": cloud.intensity if cloud.intensity is not None else np.zeros(n)}
    if "ring" in names:
        cols["ring"] = cloud.ring
    if "time" in names:
        cols["time"] = cloud.time
    return cols


def _fmt(v, kind: str) -> str:
    return str(int(v)) if kind in "UI" else repr(float(v))


def dumps(cloud: PointCloud, binary: bool = False) -> bytes:
    names = _fields_of(cloud)
    cols = _columns(cloud, names)
    n = len(cloud)
    header = ["# .PCD v0.7 - Point Cloud Data file format",
              f"# stamp {cloud.stamp!r}",
              "VERSION 0.7",
              "FIELDS " + " ".join(names),
              "SIZE " + " ".join(str(_WRITE[f][1]) for f in names),
              "TYPE " + " ".join(_WRITE[f][0] for f in names),
              "COUNT " + " ".join("1" for _ in names),
              f"WIDTH {n}", "HEIGHT 1", "VIEWPOINT 0 0 0 1 0 0 0", f"POINTS {n}",
              "DATA " + ("binary" if binary else "ascii")]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        dt = np.dtype([(f, "<" + _TYPES[_WRITE[f]]) for f in names])
        rec = np.empty(n, dtype=dt)
        for f in names:
            rec[f] = cols[f]
        return head + rec.tobytes()
    lines = [" ".join(_fmt(cols[f][i], _WRITE[f][0]) for f in names) for i in range(n)]
    return head + "".join(line + "\n" for line in lines).encode("ascii")


def write_pcd(path, cloud: PointCloud, binary: bool = False) -> None:
    Path(path).write_bytes(dumps(cloud, binary))


def loads(raw: bytes) -> PointCloud:
    header = {}
    stamp = 0.0
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise PcdError("header ended before DATA line")
        line = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "stamp":
                stamp = float(parts[1])
            continue
        key, _, rest = line.partition(" ")
        header[key.upper()] = rest.split()
        if key.upper() == "DATA":
            break
    for k in ("FIELDS", "SIZE", "TYPE", "POINTS"):
        if k not in header:
            raise PcdError(f"missing {k} in header")
    names = header["FIELDS"]
    sizes = [int(s) for s in header["SIZE"]]
    types = header["TYPE"]
    counts = [int(c) for c in header.get("COUNT", ["1"] * len(names))]
    if not (len(names) == len(sizes) == len(types) == len(counts)):
        raise PcdError("FIELDS/SIZE/TYPE/COUNT lengths differ")
    if any(c != 1 for c in counts):
        raise PcdError("only COUNT 1 fields are supported")
    for f in ("x", "y", "z"):
        if f not in names:
            raise PcdError(f"field {f!r} missing")
    n = int(header["POINTS"][0])
    try:
        dt = np.dtype([(f, "<" + _TYPES[(t, s)]) for f, t, s in zip(names, types, sizes)])
    except KeyError as exc:
        raise PcdError(f"unsupported field type {exc}") from None
    mode = header["DATA"][0].lower()
    if mode == "binary":
        body = raw[pos:pos + n * dt.itemsize]
        if len(body) != n * dt.itemsize:
            raise PcdError(f"binary payload holds {len(body)} bytes, expected {n * dt.itemsize}")
        rec = np.frombuffer(body, dtype=dt)
        cols = {f: rec[f] for f in names}
    elif mode == "ascii":
        rows = [r.split() for r in raw[pos:].decode("ascii").splitlines() if r.strip()]
        if len(rows) != n:
            raise PcdError(f"ascii payload has {len(rows)} rows, header says {n}")
        if any(len(r) != len(names) for r in rows):
            raise PcdError("ascii row with wrong field count")
        cols = {}
        for j, f in enumerate(names):
            kind = dt[f].kind
            vals = [r[j] for r in rows]
            cols[f] = np.array([int(v) for v in vals] if kind in "ui" else [float(v) for v in vals],
                               dtype=dt[f]) if n else np.zeros(0, dt[f])
    else:
        raise PcdError(f"unsupported DATA mode {mode!r}")
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(float).reshape(-1, 3)
    inten = cols["intensity"].astype(float) if "intensity" in cols else None
    ring = cols["ring"].astype(np.int64) if "ring" in cols else None
    tm = cols["time"].astype(float) if "time" in cols else None
    return PointCloud(xyz, inten, ring, tm, stamp)


def read_pcd(path) -> PointCloud:
    return loads(Path(path).read_bytes())
