import json

import numpy as np
import pytest

from lioforge.cloud import PointCloud
from lioforge.geometry import Pose, StampedPose
from lioforge.io.config import ConfigError, from_dict, load_pipeline, load_scenario, to_dict
from lioforge.io.dataset import (DatasetError, load_dataset, read_imu, read_tracks, verify_manifest,
                                 write_dataset)
from lioforge.io.pcd import PcdError, dumps, loads, read_pcd, write_pcd
from lioforge.io.tum import TumError, read_tum, write_tum
from lioforge.pipeline import PipelineConfig
from lioforge.simulation import Scenario, SensorNoise, generate


@pytest.fixture(scope="module")
def tiny():
    return generate(Scenario(duration=0.5))


def cloud(rng, n=50):
    return PointCloud(rng.normal(size=(n, 3)) * 10, rng.integers(-1, 20, n).astype(float),
                      rng.integers(0, 16, n), rng.uniform(0, 0.1, n), 1.000000123456789)


@pytest.mark.parametrize("binary", [False, True])
def test_pcd_roundtrip_lossless(rng, tmp_path, binary):
    c = cloud(rng)
    write_pcd(tmp_path / "a.pcd", c, binary=binary)
    back = read_pcd(tmp_path / "a.pcd")
    np.testing.assert_array_equal(back.xyz, c.xyz)
    np.testing.assert_array_equal(back.intensity, c.intensity)
    np.testing.assert_array_equal(back.ring, c.ring)
    np.testing.assert_array_equal(back.time, c.time)
    assert back.stamp == c.stamp


def test_pcd_empty_and_foreign_header():
    e = loads(dumps(PointCloud.empty()))
    assert len(e) == 0
    # a typical third-party float32 file without ring/time
    raw = (b"VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 2\nHEIGHT 1\n"
           b"VIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA binary\n")
    raw += np.array([[1, 2, 3], [4, 5, 6]], "<f4").tobytes()
    c = loads(raw)
    np.testing.assert_array_equal(c.xyz, [[1, 2, 3], [4, 5, 6]])
    # missing ring ids are filled with -1
    np.testing.assert_array_equal(c.ring, [-1, -1])


def test_pcd_errors(rng):
    good = dumps(cloud(rng, 5), binary=True)
    with pytest.raises(PcdError, match="binary payload"):
        loads(good[:-3])
    with pytest.raises(PcdError, match="header"):
        loads(b"VERSION 0.7\nFIELDS x y z\n")
    with pytest.raises(PcdError, match="missing"):
        loads(b"FIELDS x y z\nDATA ascii\n")
    with pytest.raises(PcdError, match="rows"):
        loads(b"FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nPOINTS 2\nDATA ascii\n1 2 3\n")
    with pytest.raises(PcdError, match="DATA"):
        loads(b"FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nPOINTS 0\nDATA binary_compressed\n")
    with pytest.raises(PcdError, match="'z'"):
        loads(b"FIELDS x y\nSIZE 8 8\nTYPE F F\nPOINTS 0\nDATA ascii\n")


def test_tum_roundtrip(tmp_path, rng):
    poses = [StampedPose(0.1 * i, Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3)))
             for i in range(10)]
    write_tum(tmp_path / "t.tum", poses)
    back = read_tum(tmp_path / "t.tum")
    for a, b in zip(poses, back):
        assert abs(a.stamp - b.stamp) < 1e-9
        assert b.pose.is_close(a.pose, 1e-8)
    lines = (tmp_path / "t.tum").read_text().splitlines()
    cols = lines[0].split()
    assert len(cols) == 8 and len(cols[1].split(".")[1]) == 9


def test_tum_errors(tmp_path):
    p = tmp_path / "bad.tum"
    p.write_text("# comment\n0 0 0 0 0 0 0 1\n1 2 3\n")
    with pytest.raises(TumError, match=":3:"):
        read_tum(p)
    p.write_text("0 0 0 0 0 0 0 x\n")
    with pytest.raises(TumError, match="non-numeric"):
        read_tum(p)
    with pytest.raises(FileNotFoundError):
        read_tum(tmp_path / "missing.tum")


def test_config_unknown_key_has_line_and_suggestion(tmp_path):
    p = tmp_path / "scn.json"
    p.write_text('{\n  "seed": 3,\n  "duraton": 4.0\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_scenario(p)
    msg = str(exc.value)
    assert f"{p}:3" in msg and "duraton" in msg and "did you mean 'duration'" in msg
    assert exc.value.line == 3


def test_config_type_errors_nested(tmp_path):
    p = tmp_path / "scn.json"
    p.write_text('{\n  "noise": {\n    "range_sigma": "big"\n  }\n}\n')
    with pytest.raises(ConfigError, match=r"noise\.range_sigma.*expected a number") as exc:
        load_scenario(p)
    assert exc.value.line == 3
    p.write_text('{"noise": {"range_sigma": -1.0}}')
    with pytest.raises(ConfigError, match="non-negative"):
        load_scenario(p)
    p.write_text('{"seed": 1,,}')
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_scenario(p)
    p.write_text('[1, 2]')
    with pytest.raises(ConfigError, match="top level"):
        load_scenario(p)
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "none.json")


def test_config_roundtrip_and_overrides(tmp_path):
    scn = Scenario(seed=11, duration=3.0, noise=SensorNoise(range_sigma=0.02), dropouts=[["front", 1, 2]])
    p = tmp_path / "scn.json"
    p.write_text(json.dumps(to_dict(scn)))
    back = load_scenario(p)
    assert to_dict(back) == to_dict(scn)
    assert load_scenario(p, seed=5).seed == 5
    cfg = PipelineConfig(method="C", cameras=["front"])
    q = tmp_path / "pipe.json"
    q.write_text(json.dumps(to_dict(cfg)))
    assert to_dict(load_pipeline(q)) == to_dict(cfg)
    q.write_text('{"method": "E"}')
    with pytest.raises(ConfigError, match="method"):
        load_pipeline(q)
    q.write_text('{"match": {"max_iterations": 2.5}}')
    with pytest.raises(ConfigError, match="match.max_iterations.*integer"):
        load_pipeline(q)


def test_from_dict_bool_not_number():
    with pytest.raises(ConfigError, match="true/false"):
        from_dict(PipelineConfig, {"use_vio": 1})
    with pytest.raises(ConfigError, match="number"):
        from_dict(Scenario, {"duration": True})


def test_dataset_roundtrip(tiny, tmp_path):
    write_dataset(tiny, tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert len(ds.scans) == len(tiny.scans)
    for a, b in zip(ds.scans, tiny.scans):
        np.testing.assert_array_equal(a.xyz, b.xyz)
        np.testing.assert_array_equal(a.ring, b.ring)
        assert a.stamp == b.stamp
    np.testing.assert_array_equal(ds.imu.stamps, tiny.imu.stamps)
    np.testing.assert_array_equal(ds.imu.accel, tiny.imu.accel)
    assert ds.rig.names == tiny.rig.names and ds.model == tiny.model
    for fa, fb in zip(ds.frames, tiny.frames):
        assert fa.keys() == fb.keys()
        for k in fa:
            np.testing.assert_array_equal(fa[k][2], fb[k][2])
    for a, b in zip(ds.truth, tiny.truth):
        assert b.pose.is_close(a.pose, 1e-8)
    assert ds.manifest["seed"] == 7 and verify_manifest(tmp_path / "d") == []


def test_manifest_is_deterministic(tiny, tmp_path):
    m1 = write_dataset(tiny, tmp_path / "a")
    m2 = write_dataset(generate(Scenario(duration=0.5)), tmp_path / "b")
    assert m1 == m2
    (tmp_path / "a" / "imu.csv").write_text("stamp,gx,gy,gz,ax,ay,az\n")
    assert verify_manifest(tmp_path / "a") == ["imu.csv"]


def test_dataset_errors(tiny, tmp_path):
    d = tmp_path / "d"
    write_dataset(tiny, d, binary=False)
    (d / "imu.csv").write_text("stamp,gx,gy,gz,ax,ay,az\n0,0,0,0,0,0\n")
    with pytest.raises(DatasetError, match="imu.csv:2"):
        read_imu(d / "imu.csv")
    (d / "imu.csv").write_text("t,x\n")
    with pytest.raises(DatasetError, match="header"):
        read_imu(d / "imu.csv")
    (d / "tracks.jsonl").write_text('{"frame": 0}\n')
    with pytest.raises(DatasetError, match="tracks.jsonl:1"):
        read_tracks(d / "tracks.jsonl")
    (d / "truth.tum").unlink()
    with pytest.raises(FileNotFoundError, match="truth.tum"):
        load_dataset(d)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")
