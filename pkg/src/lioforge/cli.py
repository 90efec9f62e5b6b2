"""``lioforge`` command line: simulate, run, eval, bench.

Exit codes: 0 success, 2 bad input (config, missing file, unknown camera,
unmatched stamps), 1 unrecoverable pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .evaluation import EvaluationError, ablation_run, render, rpe, rpe_rows
from .io.config import ConfigError, load_pipeline, load_scenario, to_dict
from .io.dataset import DatasetError, load_dataset, write_dataset
from .io.pcd import PcdError
from .io.tum import TumError, read_tum, write_tum

log = logging.getLogger("lioforge")

INPUT_ERRORS = (ConfigError, DatasetError, PcdError, TumError, EvaluationError, FileNotFoundError)


class UsageError(Exception):
    pass


def apply_thread_cap(env=None) -> int | None:
    """Honour LIOFORGE_THREADS by capping numba's worker pool."""
    raw = (env if env is not None else os.environ).get("LIOFORGE_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LIOFORGE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"LIOFORGE_THREADS must be a positive integer, got {raw!r}")
    import numba
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def parse_cameras(text: str) -> list:
    names = [c for c in text.replace(",", "+").split("+") if c]
    if not names:
        raise UsageError("--cameras needs at least one camera name")
    return names


def _pipeline_config(args):
    from .pipeline import PipelineConfig
    cfg = load_pipeline(args.config) if args.config else PipelineConfig()
    changes = {}
    if getattr(args, "method", None):
        changes["method"] = args.method
    if getattr(args, "cameras", None):
        changes["cameras"] = parse_cameras(args.cameras)
    if getattr(args, "no_vio", False):
        changes["use_vio"] = False
    return replace(cfg, **changes) if changes else cfg


def _check_cameras(cfg, rig):
    if cfg.use_vio:
        missing = [c for c in cfg.cameras if c not in rig.names]
        if missing:
            raise UsageError(f"camera(s) {missing} not in the dataset rig {rig.names}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    from .simulation import generate
    scn = load_scenario(args.scenario, seed=args.seed)
    data = generate(scn)
    manifest = write_dataset(data, args.output, binary=not args.ascii)
    print(f"wrote {manifest['n_scans']} scans, {manifest['n_imu']} IMU samples, "
          f"{manifest['n_observations']} feature observations to {args.output}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline
    cfg = _pipeline_config(args)
    data = load_dataset(args.dataset)
    _check_cameras(cfg, data.rig)
    result = run_pipeline(data, cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_tum(out / "estimate.tum", result.estimate)
    if cfg.use_vio:
        write_tum(out / "vio_estimate.tum", result.vio_estimate)
    report = result.report()
    report["config"] = to_dict(cfg)
    _write_json(out / "report.json", report)
    c = result.counts()
    print(f"method {cfg.method}, cameras {'+'.join(cfg.cameras) if cfg.use_vio else 'none'}: "
          f"{len(result.estimate)} poses, {c['nns_rounds_executed']} association rounds "
          f"({c['nns_rounds_skipped']} skipped), {c['degenerate_frames']} degenerate window frames, "
          f"{result.timing.frame_rate():.1f} Hz")
    return 0


def cmd_eval(args) -> int:
    est = read_tum(args.estimate)
    truth = read_tum(args.truth)
    stats = rpe(est, truth, delta=args.delta, max_dt=args.max_dt)
    header, rows = rpe_rows({"estimate": stats})
    print(render(header, rows), end="")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rpe.md").write_text(render(header, rows))
        (out / "rpe.csv").write_text(render(header, rows, "csv"))
        _write_json(out / "rpe.json", {**stats.summary(), "errors": stats.errors.tolist()})
    return 0


def cmd_bench(args) -> int:
    from .plotting import plot_rpe, plot_timing, plot_trajectories
    cfg = _pipeline_config(args)
    data = load_dataset(args.dataset)
    _check_cameras(cfg, data.rig)
    methods = ("A", "B", "C", "D") if args.all_methods else (cfg.method,)
    res = ablation_run(data, cfg, methods, baseline=not args.no_baseline)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = res.to_dict()
    if "C" in res.counts and "D" in res.counts and res.counts["D"]["map_update_seconds"] > 0:
        summary["map_update_ratio_C_over_D"] = (res.counts["C"]["map_update_seconds"]
                                                / res.counts["D"]["map_update_seconds"])
    md = []
    for name, fmt_tables in (("md", res.tables("markdown")), ("csv", res.tables("csv"))):
        for key, text in fmt_tables.items():
            (out / f"{key}.{name}").write_text(text)
            if name == "md":
                md.append(f"## {key}\n\n{text}")
    if "map_update_ratio_C_over_D" in summary:
        md.append(f"map update time, rebuild (C) / incremental (D): "
                  f"{summary['map_update_ratio_C_over_D']:.2f}\n")
    (out / "report.md").write_text("\n".join(md))
    _write_json(out / "bench.json", summary)
    plot_trajectories(res.trajectories, data.truth, out / "trajectories.png")
    plot_rpe(res.rpe, out / "rpe.png")
    plot_timing(res.timing, out / "timing.png")
    print("\n".join(md))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lioforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset from a scenario file")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--ascii", action="store_true", help="write ASCII instead of binary PCD")
    s.set_defaults(func=cmd_simulate)

    def pipeline_args(q):
        q.add_argument("dataset")
        q.add_argument("--config", default=None)
        q.add_argument("--method", choices=["A", "B", "C", "D"], default=None)
        q.add_argument("--cameras", default=None, help="e.g. front+right+left")
        q.add_argument("--no-vio", action="store_true", help="LiDAR-inertial only")
        q.add_argument("-o", "--output", default="out")

    r = sub.add_parser("run", help="run odometry over a dataset")
    pipeline_args(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="relative pose error of an estimate against truth")
    e.add_argument("estimate")
    e.add_argument("truth")
    e.add_argument("--delta", type=int, default=1)
    e.add_argument("--max-dt", type=float, default=0.02)
    e.add_argument("-o", "--output", default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="method ladder benchmark with tables and figures")
    pipeline_args(b)
    b.add_argument("--all-methods", action="store_true")
    b.add_argument("--no-baseline", action="store_true", help="skip the LiDAR-inertial baseline")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_thread_cap()
        return args.func(args)
    except (UsageError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unrecoverable pipeline failure
        log.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
