import numpy as np
import pytest

from ctrio.geometry import Pose, so3_exp
from ctrio.logio import (LogFormatError, SensorLog, TrajectoryRecord,
                         read_log, read_trajectory, write_log,
                         write_trajectory)
from ctrio.models import (ImuMeasurement, NoiseModel, RadarExtrinsics,
                          RadarScan, RadarTarget)


def small_log():
    exts = [
        RadarExtrinsics("front", Pose(so3_exp([0.0, 0.0, 0.1]),
                                      np.array([3.0, 0.5, 0.2]))),
        RadarExtrinsics("rear", Pose(so3_exp([0.0, 0.0, np.pi - 0.05]),
                                     np.array([-1.0, -0.5, 0.3]))),
    ]
    records = [
        ImuMeasurement(0.0, [0.001, -0.002, 0.0], [0.01, 0.0, 9.81]),
        RadarScan(0.0125, "front", [RadarTarget(12.5, -3.25, 0.1, -0.02),
                                    RadarTarget(40.0, 0.5, -0.7, 0.1)]),
        ImuMeasurement(0.005, [0.0, 0.0, 0.0], [0.0, 0.0, 9.80665]),
        RadarScan(0.05, "rear", [RadarTarget(5.0, 2.0, 0.0, 0.0)]),
    ]
    records.sort(key=lambda r: r.t)
    return SensorLog(exts, NoiseModel(), records)


class TestRoundTrip:
    def test_values_survive(self, tmp_path):
        path = tmp_path / "log.ndjson"
        log = small_log()
        write_log(log, path)
        back = read_log(path)
        assert back.version == 1
        assert back.sensor_ids() == {"front", "rear"}
        assert len(back.records) == 4
        a, b = log.records[1], back.records[1]
        assert b.t == pytest.approx(a.t, abs=1e-9)
        np.testing.assert_allclose(b.gyro, a.gyro)
        scan = back.records[2]
        assert scan.sensor_id == "front"
        assert scan.targets[0].radial_velocity == -3.25
        np.testing.assert_allclose(
            back.extrinsics[0].pose.rotation, log.extrinsics[0].pose.rotation,
            atol=1e-12)

    def test_rewrite_is_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        write_log(small_log(), p1)
        write_log(read_log(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.ndjson"
        write_log(SensorLog(small_log().extrinsics, NoiseModel(), []), path)
        back = read_log(path)
        assert back.records == []


class TestErrors:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty"
        path.write_text("")
        with pytest.raises(LogFormatError, match="header"):
            read_log(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "x"
        path.write_text('{"type":"imu","t":0.0,"gyro":[0,0,0],'
                        '"accel":[0,0,0]}\n')
        with pytest.raises(LogFormatError, match="header"):
            read_log(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "x"
        path.write_text('{"type":"header","version":99,"extrinsics":[],'
                        '"noise":{}}\n')
        with pytest.raises(LogFormatError, match="version"):
            read_log(path)

    def test_unknown_sensor_id_names_offender(self, tmp_path):
        path = tmp_path / "x"
        log = small_log()
        log.records.append(RadarScan(1.0, "ghost", [RadarTarget(1, 0, 0, 0)]))
        write_log(log, path)
        with pytest.raises(LogFormatError, match="ghost"):
            read_log(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "x"
        write_log(small_log(), path)
        with open(path, "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(LogFormatError, match=":6:"):
            read_log(path)

    def test_timestamp_regression(self, tmp_path):
        path = tmp_path / "x"
        log = small_log()
        log.records.append(ImuMeasurement(0.001, [0, 0, 0], [0, 0, 0]))
        write_log(log, path)
        with pytest.raises(LogFormatError, match="regression"):
            read_log(path)

    def test_duplicate_header(self, tmp_path):
        path = tmp_path / "x"
        write_log(small_log(), path)
        header = path.read_text().splitlines()[0]
        with open(path, "a") as fh:
            fh.write(header + "\n")
        with pytest.raises(LogFormatError, match="duplicate"):
            read_log(path)

    def test_unknown_record_type_skipped(self, tmp_path):
        path = tmp_path / "x"
        write_log(small_log(), path)
        with open(path, "a") as fh:
            fh.write('{"type":"gps","t":9.0}\n')
        back = read_log(path)
        assert back.skipped_records == 1
        assert len(back.records) == 4


class TestTrajectoryFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "traj.ndjson"
        recs = [
            TrajectoryRecord(0.01, Pose(so3_exp([0.0, 0.0, 0.3]),
                                        np.array([1.0, 2.0, 0.1])),
                             np.array([5.0, 0.1, 0.0])),
            TrajectoryRecord(0.02, Pose.identity(), np.zeros(3)),
        ]
        write_trajectory(recs, path)
        back = read_trajectory(path)
        assert len(back) == 2
        np.testing.assert_allclose(back[0].pose.rotation,
                                   recs[0].pose.rotation, atol=1e-12)
        np.testing.assert_allclose(back[0].v_v, recs[0].v_v)
        np.testing.assert_allclose(back[0].rpy, [0.0, 0.0, 0.3], atol=1e-12)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "traj.ndjson"
        path.write_text("")
        with pytest.raises(LogFormatError):
            read_trajectory(path)
