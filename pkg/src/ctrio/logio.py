"""Sensor-log and trajectory-file serialization.

Newline-delimited self-describing JSON records. The first line is a header
carrying the format version, radar extrinsics and the noise model; the rest
are IMU or radar records in time order. Timestamps are written with nine
fractional digits (sub-millisecond hardware timestamps); all other floats use
their shortest round-trip representation, so write(read(x)) is byte-identical
on canonical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose, quat_from_rotation, rotation_from_quat,
                       rpy_from_rotation)
from .models import ImuMeasurement, NoiseModel, RadarExtrinsics, RadarScan, \
    RadarTarget

LOG_VERSION = 1


class LogFormatError(ValueError):
    """Malformed or inconsistent log content."""


@dataclass
class TrajectoryRecord:
    """One output sample: pose, body-frame velocity, and derived attitude."""

    t: float
    pose: Pose
    v_v: np.ndarray

    def __post_init__(self):
        self.v_v = np.asarray(self.v_v, dtype=float)

    @property
    def rpy(self) -> np.ndarray:
        return rpy_from_rotation(self.pose.rotation)


@dataclass
class SensorLog:
    extrinsics: list[RadarExtrinsics]
    noise: NoiseModel
    records: list = field(default_factory=list)
    version: int = LOG_VERSION
    skipped_records: int = 0
    # Quaternions exactly as serialized, keyed by sensor_id, so rewriting a
    # parsed log is bit-stable.
    extrinsics_quat: dict = field(default_factory=dict)

    def sensor_ids(self) -> set[str]:
        return {e.sensor_id for e in self.extrinsics}


def _f(x) -> str:
    return repr(float(x))


def _t(x) -> str:
    return f"{float(x):.9f}"


def _vec(v) -> str:
    return "[" + ",".join(_f(x) for x in np.asarray(v, dtype=float)) + "]"


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[3] < 0.0:
        q = -q
    return q


def _header_line(log: SensorLog) -> str:
    exts = []
    for e in log.extrinsics:
        q = log.extrinsics_quat.get(e.sensor_id)
        if q is None:
            q = _canonical_quat(quat_from_rotation(e.pose.rotation))
        exts.append('{"sensor_id":%s,"translation":%s,"quaternion":%s}'
                    % (json.dumps(e.sensor_id), _vec(e.pose.translation),
                       _vec(q)))
    n = log.noise
    noise = ('{"sigma_vr":%s,"sigma_gyro":%s,"sigma_accel":%s,'
             '"sigma_bg":%s,"sigma_ba":%s,"cauchy_scale":%s,"gravity_w":%s}'
             % (_f(n.sigma_vr), _f(n.sigma_gyro), _f(n.sigma_accel),
                _f(n.sigma_bg), _f(n.sigma_ba), _f(n.cauchy_scale),
                _vec(n.gravity_w)))
    return ('{"type":"header","version":%d,"extrinsics":[%s],"noise":%s}'
            % (log.version, ",".join(exts), noise))


def _record_line(rec) -> str:
    if isinstance(rec, ImuMeasurement):
        return ('{"type":"imu","t":%s,"gyro":%s,"accel":%s}'
                % (_t(rec.t), _vec(rec.gyro), _vec(rec.accel)))
    if isinstance(rec, RadarScan):
        tg = ",".join(
            "[%s,%s,%s,%s]" % (_f(t.range), _f(t.radial_velocity),
                               _f(t.azimuth), _f(t.elevation))
            for t in rec.targets)
        return ('{"type":"radar","t":%s,"sensor_id":%s,"targets":[%s]}'
                % (_t(rec.t), json.dumps(rec.sensor_id), tg))
    raise TypeError(f"unknown record type {type(rec)!r}")


def write_log(log: SensorLog, path) -> None:
    with open(path, "w") as fh:
        fh.write(_header_line(log) + "\n")
        for rec in log.records:
            fh.write(_record_line(rec) + "\n")


def read_log(path) -> SensorLog:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogFormatError(f"{path}: empty file, missing header")

    def fail(lineno, msg):
        raise LogFormatError(f"{path}:{lineno}: {msg}")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        fail(1, f"malformed JSON: {exc}")
    if header.get("type") != "header":
        fail(1, "first record must be the header")
    if header.get("version") != LOG_VERSION:
        fail(1, f"unsupported log version {header.get('version')!r}, "
                f"expected {LOG_VERSION}")

    extrinsics = []
    quats = {}
    for e in header.get("extrinsics", []):
        q = np.asarray(e["quaternion"], dtype=float)
        extrinsics.append(RadarExtrinsics(
            e["sensor_id"],
            Pose(rotation_from_quat(q), np.asarray(e["translation"], float))))
        quats[e["sensor_id"]] = q
    nd = header.get("noise", {})
    noise = NoiseModel(
        sigma_vr=nd.get("sigma_vr", 0.1),
        sigma_gyro=nd.get("sigma_gyro", 1e-3),
        sigma_accel=nd.get("sigma_accel", 1e-2),
        sigma_bg=nd.get("sigma_bg", 1e-5),
        sigma_ba=nd.get("sigma_ba", 1e-4),
        cauchy_scale=nd.get("cauchy_scale", 3.0),
        gravity_w=np.asarray(nd.get("gravity_w", [0.0, 0.0, 9.80665]), float))

    log = SensorLog(extrinsics, noise, [], header["version"],
                    extrinsics_quat=quats)
    known_ids = log.sensor_ids()
    last_t = -np.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            fail(lineno, f"malformed JSON: {exc}")
        kind = obj.get("type")
        if kind == "imu":
            rec = ImuMeasurement(float(obj["t"]),
                                 np.asarray(obj["gyro"], float),
                                 np.asarray(obj["accel"], float))
        elif kind == "radar":
            sid = obj["sensor_id"]
            if sid not in known_ids:
                fail(lineno, f"scan references unknown sensor_id {sid!r}")
            try:
                targets = [RadarTarget(*row) for row in obj["targets"]]
            except ValueError as exc:
                fail(lineno, f"invalid target: {exc}")
            rec = RadarScan(float(obj["t"]), sid, targets)
        elif kind == "header":
            fail(lineno, "duplicate header")
        else:
            log.skipped_records += 1
            continue
        if rec.t < last_t:
            fail(lineno, f"timestamp regression: {rec.t} after {last_t}")
        last_t = rec.t
        log.records.append(rec)
    return log


def write_trajectory(records: list[TrajectoryRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            q = _canonical_quat(quat_from_rotation(r.pose.rotation))
            fh.write('{"t":%s,"translation":%s,"quaternion":%s,"v_v":%s}\n'
                     % (_t(r.t), _vec(r.pose.translation), _vec(q),
                        _vec(r.v_v)))


def read_trajectory(path) -> list[TrajectoryRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{path}:{lineno}: malformed JSON: {exc}")
            pose = Pose(rotation_from_quat(np.asarray(obj["quaternion"], float)),
                        np.asarray(obj["translation"], float))
            out.append(TrajectoryRecord(float(obj["t"]), pose,
                                        np.asarray(obj["v_v"], float)))
    if not out:
        raise LogFormatError(f"{path}: no trajectory records")
    return out
