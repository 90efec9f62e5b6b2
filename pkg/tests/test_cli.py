import json
import subprocess
import sys

import pytest

from lioforge.cli import apply_thread_cap, main, parse_cameras, UsageError
from lioforge.geometry import pose_error
from lioforge.io.config import to_dict
from lioforge.io.tum import read_tum
from lioforge.simulation import Scenario


def write_scenario(path, **kw):
    path.write_text(json.dumps(to_dict(Scenario(**kw)), indent=2))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scn = write_scenario(root / "scn.json", duration=1.5)
    assert main(["simulate", str(scn), "-o", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def runs(dataset):
    out = {}
    for m in ("C", "D"):
        d = dataset / f"run_{m}"
        assert main(["run", str(dataset / "data"), "--method", m, "--cameras", "front+left+right",
                     "-o", str(d)]) == 0
        out[m] = d
    return out


def test_simulate_manifest_and_determinism(dataset, tmp_path):
    man = json.loads((dataset / "data" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["n_scans"] == len(list((dataset / "data" / "scans").glob("*.pcd")))
    for f in man["files"]:
        assert (dataset / "data" / f).exists()
    assert main(["simulate", str(dataset / "scn.json"), "-o", str(tmp_path / "again")]) == 0
    for f in man["files"]:
        assert (tmp_path / "again" / f).read_bytes() == (dataset / "data" / f).read_bytes()


def test_simulate_seed_override(dataset, tmp_path):
    assert main(["simulate", str(dataset / "scn.json"), "-o", str(tmp_path / "s3"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "s3" / "manifest.json").read_text())["seed"] == 3


def test_simulate_bad_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  "duration": oops\n}')
    assert main(["simulate", str(p), "-o", str(tmp_path / "x")]) == 2
    assert f"{p}:3" in capsys.readouterr().err
    p.write_text('{"n_landmark": 5}')
    assert main(["simulate", str(p), "-o", str(tmp_path / "x")]) == 2
    assert "n_landmarks" in capsys.readouterr().err


def test_run_writes_one_pose_per_scan(dataset, runs):
    est = read_tum(runs["D"] / "estimate.tum")
    truth = read_tum(dataset / "data" / "truth.tum")
    assert [p.stamp for p in est] == [p.stamp for p in truth]
    rep = json.loads((runs["D"] / "report.json").read_text())
    assert rep["method"] == "D" and rep["cameras"] == ["front", "left", "right"]
    # the first scan only seeds the map
    assert len(rep["match_reports"]) == len(est) - 1


def test_method_c_vs_d_same_trajectory(runs):
    c = read_tum(runs["C"] / "estimate.tum")
    d = read_tum(runs["D"] / "estimate.tum")
    worst = max(pose_error(a.pose, b.pose)[0] for a, b in zip(c, d))
    assert worst < 1e-3
    rc = json.loads((runs["C"] / "report.json").read_text())
    rd = json.loads((runs["D"] / "report.json").read_text())
    assert rc["counts"]["nns_rounds_executed"] == rd["counts"]["nns_rounds_executed"]
    assert rc["map"]["incremental"] is False and rd["map"]["incremental"] is True


def test_run_input_errors(dataset, tmp_path, capsys):
    assert main(["run", str(dataset / "data"), "--cameras", "front+rear", "-o", str(tmp_path)]) == 2
    assert "rear" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing"), "-o", str(tmp_path)]) == 2


def test_eval_zero_and_delta(dataset, runs, tmp_path, capsys):
    truth = str(dataset / "data" / "truth.tum")
    assert main(["eval", truth, truth, "-o", str(tmp_path / "z")]) == 0
    z = json.loads((tmp_path / "z" / "rpe.json").read_text())
    assert z["rmse"] == 0.0 and z["max"] == 0.0
    est = str(runs["D"] / "estimate.tum")
    assert main(["eval", est, truth, "-o", str(tmp_path / "d1")]) == 0
    assert main(["eval", est, truth, "--delta", "5", "-o", str(tmp_path / "d5")]) == 0
    d1 = json.loads((tmp_path / "d1" / "rpe.json").read_text())
    d5 = json.loads((tmp_path / "d5" / "rpe.json").read_text())
    assert d1["pairs"] - d5["pairs"] == 4 and d5["delta"] == 5
    assert (tmp_path / "d5" / "rpe.md").exists() and (tmp_path / "d5" / "rpe.csv").exists()


def test_eval_unmatched_stamps(tmp_path, capsys):
    a, b = tmp_path / "a.tum", tmp_path / "b.tum"
    a.write_text("0.0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n")
    b.write_text("5.0 0 0 0 0 0 0 1\n5.1 0 0 0 0 0 0 1\n")
    assert main(["eval", str(a), str(b)]) == 2
    assert "gap" in capsys.readouterr().err


def test_bench_all_methods(tmp_path):
    scn = write_scenario(tmp_path / "scn.json", duration=1.0)
    assert main(["simulate", str(scn), "-o", str(tmp_path / "data")]) == 0
    out = tmp_path / "bench"
    assert main(["bench", str(tmp_path / "data"), "--all-methods", "-o", str(out)]) == 0
    for f in ("rpe.md", "rpe.csv", "timing.md", "timing.csv", "rate.md", "report.md", "bench.json",
              "trajectories.png", "rpe.png", "timing.png"):
        assert (out / f).stat().st_size > 0
    rows = (out / "rpe.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["LIO", "A", "B", "C", "D"]
    summary = json.loads((out / "bench.json").read_text())
    assert summary["map_update_ratio_C_over_D"] > 0
    n = {m: summary["counts"][m]["nns_rounds_executed"] for m in "ABCD"}
    assert n["C"] < n["B"] and n["D"] == n["C"]
    pts = {m: summary["counts"][m]["prehandle_points"] for m in "AB"}
    assert pts["B"] < pts["A"]


def test_thread_cap_and_camera_parsing():
    assert apply_thread_cap({}) is None
    assert apply_thread_cap({"LIOFORGE_THREADS": "1"}) == 1
    for bad in ("0", "two"):
        with pytest.raises(UsageError):
            apply_thread_cap({"LIOFORGE_THREADS": bad})
    assert parse_cameras("front+left") == ["front", "left"]
    assert parse_cameras("front,right") == ["front", "right"]
    with pytest.raises(UsageError):
        parse_cameras("+")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lioforge", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "lioforge", "eval", "nope.tum", "nope.tum"],
                         capture_output=True, text=True)
    assert bad.returncode == 2 and "not found" in bad.stderr
