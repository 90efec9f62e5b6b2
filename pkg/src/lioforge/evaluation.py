"""Relative pose error, relative frame rate and per-stage timing tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, StampedPose, compose, inverse


class EvaluationError(ValueError):
    pass


@dataclass
class RpeStats:
    rmse: float
    mean: float
    max: float
    min: float
    errors: np.ndarray
    rotation_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: int = 1

    @property
    def pairs(self) -> int:
        return int(len(self.errors))

    @property
    def rotation_rmse(self) -> float:
        r = self.rotation_errors
        return float(np.sqrt(np.mean(r * r))) if len(r) else 0.0

    def summary(self) -> dict:
        return {"rmse": self.rmse, "mean": self.mean, "max": self.max, "min": self.min,
                "pairs": self.pairs, "delta": self.delta,
                "rotation_rmse_deg": math.degrees(self.rotation_rmse)}


def associate(estimate, truth, max_dt: float = 0.02):
    """Index pairs (i_est, i_truth) matched by nearest stamp within ``max_dt``."""
    te = np.array([p.stamp for p in estimate], dtype=float)
    tt = np.array([p.stamp for p in truth], dtype=float)
    if len(te) == 0 or len(tt) == 0:
        return [], []
    order = np.argsort(tt)
    ts = tt[order]
    pos = np.clip(np.searchsorted(ts, te), 1, max(len(ts) - 1, 1))
    lo = np.clip(pos - 1, 0, len(ts) - 1)
    hi = np.clip(pos, 0, len(ts) - 1)
    pick = np.where(np.abs(ts[lo] - te) <= np.abs(ts[hi] - te), lo, hi)
    ok = np.abs(ts[pick] - te) <= max_dt
    ie = np.flatnonzero(ok)
    it = order[pick[ok]]
    return list(ie), list(it)


def rpe(estimate, truth, delta: int = 1, max_dt: float = 0.02) -> RpeStats:
    """Translation RPE over matched pairs ``i, i + delta``.

    error_i = | trans((Q_i^-1 Q_{i+d})^-1 (P_i^-1 P_{i+d})) | with P the
    estimate and Q the truth.
    """
    if delta < 1:
        raise EvaluationError("delta must be >= 1")
    ie, it = associate(estimate, truth, max_dt)
    if len(ie) < delta + 1:
        gap = _largest_gap(estimate, truth)
        raise EvaluationError(f"only {len(ie)} matched stamps within {max_dt}s "
                              f"(need {delta + 1}); largest stamp gap {gap:.6f}s")
    P = [estimate[i].pose for i in ie]
    Q = [truth[i].pose for i in it]
    err, rot = [], []
    for i in range(len(P) - delta):
        dp = compose(inverse(P[i]), P[i + delta])
        dq = compose(inverse(Q[i]), Q[i + delta])
        # translation of dq^-1 dp, written so identical inputs give exactly zero
        err.append(float(np.linalg.norm(dq.R.T @ (dp.t - dq.t))))
        rot.append(compose(inverse(dq), dp).rotation_angle())
    e = np.asarray(err)
    return RpeStats(float(np.sqrt(np.mean(e * e))), float(e.mean()), float(e.max()), float(e.min()),
                    e, np.asarray(rot), delta)


def _largest_gap(estimate, truth) -> float:
    tt = np.sort([p.stamp for p in truth])
    if len(tt) == 0 or len(estimate) == 0:
        return float("inf")
    te = np.array([p.stamp for p in estimate])
    pos = np.clip(np.searchsorted(tt, te), 1, max(len(tt) - 1, 1))
    d = np.minimum(np.abs(tt[pos - 1] - te), np.abs(tt[np.minimum(pos, len(tt) - 1)] - te))
    return float(d.max())


def relative_frame_rate(rates: dict, baseline: str) -> dict:
    """Percent change of each method's frame rate against ``baseline``."""
    if baseline not in rates:
        raise EvaluationError(f"baseline {baseline!r} not among {sorted(rates)}")
    base = float(rates[baseline])
    if base <= 0:
        raise EvaluationError("baseline rate must be positive")
    return {k: (float(v) - base) / base * 100.0 for k, v in rates.items()}


# -- timing -----------------------------------------------------------------------------

STAGES = ("prehandle", "features", "optimization", "map_update", "fusion")


@dataclass
class StageTiming:
    total_ms: float = 0.0
    count: int = 0
    points: int = 0

    def add(self, seconds: float, points: int = 0) -> None:
        if seconds < 0:
            raise ValueError("negative duration")
        self.total_ms += seconds * 1000.0
        self.count += 1
        self.points += int(points)

    @property
    def mean_ms(self) -> float:
        return self.total_ms / self.count if self.count else 0.0

    @property
    def mean_points(self) -> float:
        return self.points / self.count if self.count else 0.0


@dataclass
class TimingTable:
    stages: dict = field(default_factory=lambda: {s: StageTiming() for s in STAGES})
    cpu_seconds: float | None = None
    wall_seconds: float | None = None

    def add(self, stage: str, seconds: float, points: int = 0) -> None:
        self.stages.setdefault(stage, StageTiming()).add(seconds, points)

    def mean_frame_ms(self, stages=("prehandle", "features", "optimization", "map_update")) -> float:
        return sum(self.stages[s].mean_ms for s in stages if s in self.stages)

    def frame_rate(self, **kw) -> float:
        ms = self.mean_frame_ms(**kw)
        return 1000.0 / ms if ms > 0 else float("inf")

    def to_dict(self) -> dict:
        d = {k: {"total_ms": v.total_ms, "count": v.count, "points": v.points,
                 "mean_ms": v.mean_ms, "mean_points": v.mean_points} for k, v in self.stages.items()}
        out = {"stages": d, "frame_rate_hz": self.frame_rate()}
        if self.cpu_seconds is not None and self.wall_seconds:
            out["cpu_percent"] = 100.0 * self.cpu_seconds / self.wall_seconds
        return out


# -- tables ----------------------------------------------------------------------------

def _markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def rpe_rows(results: dict):
    header = ["method", "rmse_m", "mean_m", "max_m", "min_m", "pairs"]
    rows = [[k, f"{s.rmse:.6f}", f"{s.mean:.6f}", f"{s.max:.6f}", f"{s.min:.6f}", s.pairs]
            for k, s in results.items()]
    return header, rows


def timing_rows(tables: dict, counts: dict | None = None):
    header = ["method", "prehandle_ms", "features_ms", "optimization_ms", "map_update_ms",
              "fusion_ms", "points", "nns_rounds"]
    rows = []
    for k, t in tables.items():
        st = t.stages
        extra = (counts or {}).get(k, {})
        rows.append([k] + [f"{st[s].mean_ms:.3f}" for s in STAGES]
                    + [f"{st['prehandle'].mean_points:.1f}", extra.get("nns_rounds_executed", "")])
    return header, rows


def rate_rows(rates: dict, baseline: str):
    rel = relative_frame_rate(rates, baseline)
    header = ["method", "frame_rate_hz", "relative_percent"]
    return header, [[k, f"{rates[k]:.3f}", f"{rel[k]:+.1f}%"] for k in rates]


def render(header, rows, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        return _markdown(header, rows)
    if fmt == "csv":
        return _csv(header, rows)
    raise ValueError(f"unknown table format {fmt!r}")


# -- ablation ----------------------------------------------------------------------------

METHODS = ("A", "B", "C", "D")


@dataclass
class AblationResult:
    rpe: dict
    timing: dict
    counts: dict
    trajectories: dict
    baseline: str = "LIO"

    @property
    def rates(self) -> dict:
        return {k: t.frame_rate() for k, t in self.timing.items()}

    def tables(self, fmt: str = "markdown") -> dict:
        return {"rpe": render(*rpe_rows(self.rpe), fmt),
                "timing": render(*timing_rows(self.timing, self.counts), fmt),
                "rate": render(*rate_rows(self.rates, self.baseline), fmt)}

    def to_dict(self) -> dict:
        return {"rpe": {k: v.summary() for k, v in self.rpe.items()},
                "timing": {k: v.to_dict() for k, v in self.timing.items()},
                "counts": self.counts,
                "relative_rate_percent": relative_frame_rate(self.rates, self.baseline)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def ablation_run(data, config=None, methods=METHODS, baseline: bool = True) -> AblationResult:
    """Run the pipeline once per method (plus the LiDAR-inertial baseline).

    A: no efficiency options; B: + noise removal; C: + correspondence
    reuse; D: + incremental map.
    """
    from .pipeline import PipelineConfig, run_pipeline
    config = config or PipelineConfig()
    names = (["LIO"] if baseline else []) + list(methods)
    res_rpe, timing, counts, traj = {}, {}, {}, {}
    for m in names:
        # the LiDAR-inertial baseline runs without VIO and without any efficiency option
        cfg = config.with_method("A" if m == "LIO" else m, use_vio=(m != "LIO"))
        out = run_pipeline(data, cfg)
        traj[m] = out.estimate
        res_rpe[m] = rpe(out.estimate, data.truth)
        timing[m] = out.timing
        counts[m] = out.counts()
    return AblationResult(res_rpe, timing, counts, traj, "LIO" if baseline else names[0])
