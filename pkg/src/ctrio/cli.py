"""Command-line entry points: scenario simulation, estimator runs, a
dead-reckoning baseline, metric evaluation, and plot emission.

Exit codes: 1 usage, 2 I/O, 3 validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

import numpy as np

from .estimator import (EstimatorConfig, InitializationError, NumericalError,
                        SlidingWindowEstimator, SolverConfig, ego_velocity_lsq)
from .geometry import Pose, rotation_from_quat, so3_exp
from .logio import (LogFormatError, TrajectoryRecord, read_log,
                    read_trajectory, write_log, write_trajectory)
from .metrics import MetricsError, evaluate
from .models import ImuMeasurement, NoiseModel, RadarExtrinsics, RadarScan
from .simulator import RadarSensorConfig, ScenarioConfig, generate

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Config files


def _apply_overrides(obj, overrides: dict, skip=()):
    """Set dataclass fields from a dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        if key in skip:
            continue
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        setattr(obj, key, value)


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return doc


def _noise_from_dict(doc: dict) -> NoiseModel:
    noise = NoiseModel()
    _apply_overrides(noise, doc)
    noise.__post_init__()
    return noise


def _radar_from_dict(doc: dict) -> RadarSensorConfig:
    rotation = rotation_from_quat(np.asarray(
        doc.get("quaternion", [0.0, 0.0, 0.0, 1.0]), dtype=float))
    ext = RadarExtrinsics(
        doc["sensor_id"],
        Pose(rotation, np.asarray(doc.get("translation", [0.0] * 3), float)))
    sensor = RadarSensorConfig(ext)
    _apply_overrides(sensor, doc,
                     skip=("sensor_id", "translation", "quaternion"))
    return sensor


def load_scenario(path) -> ScenarioConfig:
    doc = _load_json(path)
    try:
        config = ScenarioConfig(
            duration=doc["duration"],
            trajectory=doc["trajectory"],
            radars=[_radar_from_dict(r) for r in doc.get("radars", [])])
    except KeyError as exc:
        raise ValueError(f"{path}: missing scenario key {exc}") from exc
    if "noise" in doc:
        config.noise = _noise_from_dict(doc["noise"])
    _apply_overrides(config, doc,
                     skip=("duration", "trajectory", "radars", "noise"))
    config.__post_init__()
    return config


def load_estimator_config(path, log) -> EstimatorConfig:
    """Estimator configuration: extrinsics and noise come from the log
    header; the optional JSON file overrides tuning fields."""
    config = EstimatorConfig(noise=log.noise, extrinsics=log.extrinsics)
    if path is not None:
        doc = _load_json(path)
        if "noise" in doc:
            config.noise = _noise_from_dict(doc["noise"])
        if "solver" in doc:
            _apply_overrides(config.solver, doc["solver"])
        _apply_overrides(config, doc, skip=("noise", "solver", "extrinsics"))
        config.__post_init__()
    return config


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> int:
    config = load_scenario(args.config)
    gt, log = generate(config)
    write_log(log, args.out)
    if args.truth:
        records = []
        n = int(math.floor(config.duration * args.truth_rate))
        for k in range(n + 1):
            t = min(k / args.truth_rate, config.duration)
            pose, v_v, _ = gt.sample(t)
            records.append(TrajectoryRecord(t, pose, v_v))
        write_trajectory(records, args.truth)
    return 0


def cmd_run(args) -> int:
    log = read_log(args.log)
    config = load_estimator_config(args.config, log)
    est = SlidingWindowEstimator(config)
    records = est.process(log.records) + est.finish()
    write_trajectory(records, args.out)
    if args.stats:
        stats = est.summary_stats()
        stats["window_variable_count"] = est.window_variable_count
        with open(args.stats, "w") as fh:
            json.dump(stats, fh, indent=2)
            fh.write("\n")
    return 0


def cmd_baseline(args) -> int:
    """Dead-reckoning comparison: per-scan least-squares ego velocity
    integrated under a gyro-only attitude."""
    log = read_log(args.log)
    ext = {e.sensor_id: e for e in log.extrinsics}
    imu = [r for r in log.records if isinstance(r, ImuMeasurement)]
    if not imu:
        raise ValueError("baseline requires IMU records for attitude")
    t0 = imu[0].t
    lead = [m for m in imu if m.t - t0 <= 0.5]
    gyro_bias = np.mean([m.gyro for m in lead], axis=0)

    rotation = np.eye(3)
    position = np.zeros(3)
    t_prev = None
    omega = np.zeros(3)
    v_v = np.zeros(3)
    records = []
    for rec in log.records:
        if isinstance(rec, ImuMeasurement):
            if t_prev is not None:
                dt = rec.t - t_prev
                position = position + rotation @ v_v * dt
                rotation = rotation @ so3_exp((rec.gyro - gyro_bias) * dt)
            omega = rec.gyro - gyro_bias
            t_prev = rec.t
        elif isinstance(rec, RadarScan):
            fit = ego_velocity_lsq(rec, log.noise)
            if not fit.valid:
                continue
            e = ext[rec.sensor_id]
            v_v = e.pose.rotation @ fit.v_s - np.cross(omega,
                                                       e.pose.translation)
            if t_prev is not None and rec.t > t_prev:
                dt = rec.t - t_prev
                position = position + rotation @ v_v * dt
                t_prev = rec.t
            records.append(TrajectoryRecord(
                rec.t, Pose(rotation.copy(), position.copy()), v_v))
    write_trajectory(records, args.out)
    return 0


def cmd_evaluate(args) -> int:
    estimate = read_trajectory(args.estimate)
    truth = read_trajectory(args.truth)
    lengths = [float(v) for v in args.lengths.split(",") if v]
    report = evaluate(estimate, truth, lengths)
    doc = report.as_dict()
    with open(args.report, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    v = report.velocity_rmse
    a = report.attitude_rmse_deg
    print(f"velocity RMSE [m/s]: x={v[0]:.4f} y={v[1]:.4f} z={v[2]:.4f}")
    print(f"attitude RMSE [deg]: roll={a[0]:.4f} pitch={a[1]:.4f} "
          f"yaw={a[2]:.4f}")
    print(f"translational error: {report.translation_2d_percent:.4f}% (2D) "
          f"{report.translation_3d_percent:.4f}% (3D)")
    print(f"rotational error: {report.rotation_deg_per_m:.6f} deg/m")
    return 0


def _write_csv(path, header: list[str], rows: np.ndarray):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _series(records):
    t = np.array([r.t for r in records])
    p = np.array([r.pose.translation for r in records])
    v = np.array([r.v_v for r in records])
    att = np.degrees([r.rpy for r in records])
    return t, p, v, att


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimate = read_trajectory(args.estimate)
    if not estimate:
        raise ValueError("estimate trajectory is empty")
    truth = read_trajectory(args.truth) if args.truth else None

    sets = [("estimate", estimate)] + ([("truth", truth)] if truth else [])
    for name, records in sets:
        t, p, v, att = _series(records)
        _write_csv(out / f"{name}.csv",
                   ["t", "x", "y", "z", "vx", "vy", "vz",
                    "roll_deg", "pitch_deg", "yaw_deg"],
                   np.column_stack([t, p, v, att]))

    figures = {
        "track": (lambda tt, p, v, a: (p[:, 0], p[:, 1]),
                  "x [m]", "y [m]", None),
        "translation": (lambda tt, p, v, a: (tt, p),
                        "t [s]", "position [m]", "xyz"),
        "velocity": (lambda tt, p, v, a: (tt, v),
                     "t [s]", "body velocity [m/s]", "xyz"),
        "attitude": (lambda tt, p, v, a: (tt, a),
                     "t [s]", "attitude [deg]",
                     ("roll", "pitch", "yaw")),
    }
    for fig_name, (extract, xlabel, ylabel, axes) in figures.items():
        fig, ax = plt.subplots(figsize=(7, 5))
        for name, records in sets:
            style = "-" if name == "estimate" else "--"
            t, p, v, att = _series(records)
            xs, ys = extract(t, p, v, att)
            if ys.ndim == 1:
                ax.plot(xs, ys, style, label=name)
            else:
                for j in range(ys.shape[1]):
                    ax.plot(xs, ys[:, j], style,
                            label=f"{name} {axes[j]}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if fig_name == "track":
            ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / f"{fig_name}.svg")
        plt.close(fig)
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="ctrio",
                     description="Continuous-time radar-inertial odometry "
                                 "toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sensor log")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="output sensor log path")
    p.add_argument("--truth", help="optional ground-truth trajectory path")
    p.add_argument("--truth-rate", type=float, default=100.0,
                   help="ground-truth sample rate in Hz")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the sliding-window estimator")
    p.add_argument("--log", required=True, help="input sensor log")
    p.add_argument("--config", help="optional estimator config JSON")
    p.add_argument("--out", required=True, help="output trajectory path")
    p.add_argument("--stats", help="optional solver statistics JSON path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline",
                       help="per-scan ego-velocity dead reckoning")
    p.add_argument("--log", required=True, help="input sensor log")
    p.add_argument("--out", required=True, help="output trajectory path")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="compare estimate against truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--lengths", default="10,20,30,40,50,60,70,80",
                   help="comma-separated segment lengths in metres")
    p.add_argument("--report", required=True, help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="emit CSV series and SVG figures")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"ctrio: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LogFormatError, MetricsError, InitializationError,
            ValueError) as exc:
        print(f"ctrio: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"ctrio: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
