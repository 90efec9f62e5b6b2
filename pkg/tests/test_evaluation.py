import json

import numpy as np
import pytest

from lioforge.evaluation import (EvaluationError, StageTiming, TimingTable, associate, rate_rows,
                                 relative_frame_rate, render, rpe, rpe_rows, timing_rows)
from lioforge.geometry import Pose, StampedPose, compose


def line(step, n=3, dt=0.1):
    return [StampedPose(i * dt, Pose(t=[step * i, 0.0, 0.0])) for i in range(n)]


def random_traj(rng, n=20):
    out, cur = [], Pose()
    for i in range(n):
        cur = compose(cur, Pose.from_rotvec(rng.normal(size=3) * 0.1, rng.normal(size=3) * 0.5))
        out.append(StampedPose(i * 0.1, cur))
    return out


def moved(traj, T, left=True):
    return [StampedPose(p.stamp, compose(T, p.pose) if left else p.pose) for p in traj]


def test_identical_is_zero():
    t = line(1.0, 10)
    s = rpe(t, t)
    assert s.rmse == s.mean == s.max == s.min == 0.0 and s.pairs == 9


def test_hand_example():
    s = rpe(line(1.1), line(1.0))
    np.testing.assert_allclose(s.errors, [0.1, 0.1], rtol=0, atol=1e-15)
    assert s.rmse == pytest.approx(0.1, abs=1e-15) and s.mean == pytest.approx(0.1, abs=1e-15)
    s2 = rpe(line(1.1), line(1.0), delta=2)
    assert s2.pairs == 1 and s2.rmse == pytest.approx(0.2, abs=1e-14)


def test_global_translation_is_invisible():
    t = line(1.0, 5)
    s = rpe(moved(t, Pose(t=[5.0, 0, 0])), t)
    assert s.max < 1e-15


def test_rigid_invariance_random(rng):
    worst = 0.0
    for _ in range(100):
        truth = random_traj(rng)
        est = [StampedPose(p.stamp, compose(p.pose, Pose.from_rotvec(rng.normal(size=3) * 0.01,
                                                                      rng.normal(size=3) * 0.05)))
               for p in truth]
        base = rpe(est, truth).errors
        T = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 10)
        both = rpe(moved(est, T), moved(truth, T)).errors
        alone = rpe(moved(est, T), truth).errors
        worst = max(worst, np.abs(both - base).max(), np.abs(alone - base).max())
    assert worst < 1e-9


def test_stats_ordering(rng):
    truth = random_traj(rng, 30)
    est = random_traj(rng, 30)
    s = rpe(est, truth)
    assert s.min <= s.mean <= s.max and s.rmse >= 0
    assert json.loads(json.dumps(s.summary()))["pairs"] == 29


def test_association_window():
    truth = line(1.0, 5)
    late = [StampedPose(p.stamp + 0.015, p.pose) for p in truth]
    ie, it = associate(late, truth)
    assert ie == it == list(range(5))
    too_late = [StampedPose(p.stamp + 0.03, p.pose) for p in truth]
    assert associate(too_late, truth) == ([], [])
    with pytest.raises(EvaluationError, match="matched"):
        rpe(too_late, truth)
    with pytest.raises(EvaluationError):
        rpe(truth[:2], truth[:2], delta=2)
    with pytest.raises(EvaluationError):
        rpe(truth, truth, delta=0)


def test_association_skips_unmatched():
    truth = line(1.0, 5)
    est = truth[:2] + [StampedPose(0.25, truth[2].pose)] + truth[3:]
    ie, it = associate(est, truth)
    assert ie == [0, 1, 3, 4] and it == [0, 1, 3, 4]


def test_relative_frame_rate_examples():
    r = relative_frame_rate({"base": 10.0, "a": 9.24, "d": 10.21}, "base")
    assert r["base"] == 0.0
    assert r["a"] == pytest.approx(-7.6, abs=1e-9) and r["d"] == pytest.approx(2.1, abs=1e-9)
    with pytest.raises(EvaluationError):
        relative_frame_rate({"a": 1.0}, "base")
    with pytest.raises(EvaluationError):
        relative_frame_rate({"base": 0.0}, "base")


def test_timing_table():
    tt = TimingTable()
    tt.add("prehandle", 0.002, 100)
    tt.add("prehandle", 0.004, 300)
    tt.add("optimization", 0.010)
    assert tt.stages["prehandle"].mean_ms == pytest.approx(3.0)
    assert tt.stages["prehandle"].mean_points == 200
    assert tt.mean_frame_ms() == pytest.approx(13.0)
    assert tt.frame_rate() == pytest.approx(1000 / 13.0)
    with pytest.raises(ValueError):
        StageTiming().add(-1.0)
    assert TimingTable().frame_rate() == float("inf")
    d = tt.to_dict()
    assert d["stages"]["optimization"]["count"] == 1


def test_table_rendering():
    s = rpe(line(1.1), line(1.0))
    md = render(*rpe_rows({"D": s}))
    assert md.splitlines()[0].startswith("| method") and "0.100000" in md
    csv = render(*rpe_rows({"D": s}), fmt="csv")
    assert csv.splitlines()[1].startswith("D,0.100000")
    tt = TimingTable()
    tt.add("prehandle", 0.001, 10)
    assert "nns_rounds" in render(*timing_rows({"A": tt}, {"A": {"nns_rounds_executed": 4}}))
    assert "+0.0%" in render(*rate_rows({"LIO": 10.0}, "LIO"))
    with pytest.raises(ValueError):
        render(["a"], [], fmt="xml")
