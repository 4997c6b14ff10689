"""File-format round trips and malformed-input handling."""
import os

import numpy as np
import pytest

from lidarmm import io
from lidarmm.clocksync import TimestampPair
from lidarmm.core import Pose, Rotation, Trajectory, so3_exp
from lidarmm.errors import DataError
from lidarmm.mapping import LidarScan, PointCloud
from lidarmm.tempcal import ImuSample


def sample_traj():
    rng = np.random.default_rng(0)
    poses = []
    for k in range(20):
        poses.append(Pose(0.1 * k, Rotation(rng.normal(size=4)),
                          rng.normal(size=3)))
    return Trajectory(poses)


# ------------------------------------------------------------------------ TUM

def test_tum_round_trip(tmp_path):
    traj = sample_traj()
    path = tmp_path / "traj.tum"
    io.write_tum(path, traj)
    back = io.read_tum(path)
    assert np.allclose(back.times, traj.times, atol=1e-9)
    assert np.allclose(back.translations, traj.translations, atol=1e-9)
    for a, b in zip(back, traj):
        assert a.rotation.approx_equal(b.rotation, 1e-7)


def test_tum_field_order_is_txyz_qxyzw(tmp_path):
    path = tmp_path / "one.tum"
    path.write_text("# comment line\n"
                    "1.5 1.0 2.0 3.0 0.0 0.0 0.7071067811865476 0.7071067811865476\n")
    traj = io.read_tum(path)
    p = traj[0]
    assert p.t == 1.5
    assert np.allclose(p.translation, [1.0, 2.0, 3.0])
    assert p.rotation.approx_equal(so3_exp(np.array([0, 0, np.pi / 2])), 1e-9)


def test_tum_rejects_bad_field_count(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("1.0 2.0 3.0\n")
    with pytest.raises(DataError) as exc:
        io.read_tum(path)
    assert "expected 8 fields" in str(exc.value)


def test_tum_rejects_empty(tmp_path):
    path = tmp_path / "empty.tum"
    path.write_text("# only a comment\n")
    with pytest.raises(DataError):
        io.read_tum(path)


def test_tum_rejects_non_numeric(tmp_path):
    path = tmp_path / "nan.tum"
    path.write_text("a b c d e f g h\n")
    with pytest.raises(DataError):
        io.read_tum(path)


# ------------------------------------------------------------------ CSV files

def test_timestamp_pairs_round_trip(tmp_path):
    pairs = [TimestampPair(0.005 * k, 5.0 + 0.005 * k + 0.001)
             for k in range(50)]
    path = tmp_path / "pairs.csv"
    io.write_timestamp_pairs(path, pairs)
    back = io.read_timestamp_pairs(path)
    assert len(back) == len(pairs)
    for a, b in zip(back, pairs):
        assert a.sensor_time == pytest.approx(b.sensor_time, abs=1e-9)
        assert a.host_time == pytest.approx(b.host_time, abs=1e-9)


def test_timestamp_pairs_requires_header(tmp_path):
    path = tmp_path / "pairs.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        io.read_timestamp_pairs(path)


def test_imu_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    samples = [ImuSample(t=0.005 * k, gyro=rng.normal(size=3),
                         accel=rng.normal(size=3)) for k in range(30)]
    path = tmp_path / "imu.csv"
    io.write_imu_csv(path, samples)
    back = io.read_imu_csv(path)
    for a, b in zip(back, samples):
        assert a.t == pytest.approx(b.t, abs=1e-9)
        assert np.allclose(a.gyro, b.gyro, atol=1e-9)
        assert np.allclose(a.accel, b.accel, atol=1e-9)


def test_imu_requires_header(tmp_path):
    path = tmp_path / "imu.csv"
    path.write_text("t,gx\n0,0\n")
    with pytest.raises(DataError):
        io.read_imu_csv(path)


# ------------------------------------------------------------------------ PLY

@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    rng = np.random.default_rng(2)
    xyz = rng.uniform(-5, 5, size=(100, 3))
    inten = rng.uniform(0, 255, size=100).astype(np.float32).astype(float)
    path = tmp_path / "cloud.ply"
    io.write_ply(path, xyz, {"intensity": inten}, binary=binary)
    back_xyz, extras = io.read_ply(path)
    assert np.allclose(back_xyz, xyz, atol=1e-12)
    assert np.allclose(extras["intensity"], inten, atol=1e-6)


def test_ply_float32_coordinates(tmp_path):
    xyz = np.array([[1.5, -2.25, 3.125]])
    path = tmp_path / "f32.ply"
    io.write_ply(path, xyz, binary=True, coord_dtype="float32")
    back, _ = io.read_ply(path)
    assert np.allclose(back, xyz)   # values chosen exactly representable


def test_ply_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply\n")
    with pytest.raises(DataError):
        io.read_ply(path)


def test_ply_rejects_missing_coordinates(tmp_path):
    path = tmp_path / "noz.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                    "property float x\nproperty float y\nend_header\n1 2\n")
    with pytest.raises(DataError):
        io.read_ply(path)


def test_ply_rejects_list_properties(tmp_path):
    path = tmp_path / "list.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                    "property list uchar int vertex_indices\nend_header\n")
    with pytest.raises(DataError):
        io.read_ply(path)


def test_point_cloud_round_trip(tmp_path):
    cloud = PointCloud(np.random.default_rng(3).uniform(size=(40, 3)),
                       intensity=np.arange(40.0))
    path = tmp_path / "pc.ply"
    io.write_point_cloud(path, cloud)
    back = io.read_point_cloud(path)
    assert np.allclose(back.xyz, cloud.xyz)
    assert np.allclose(back.intensity, cloud.intensity)


# ---------------------------------------------------------------------- scans

def test_scan_round_trip_and_filename(tmp_path):
    scan = LidarScan(scan_start=12.345678901,
                     points=np.array([[1.0, 2, 3], [4.0, 5, 6]]),
                     intensity=np.array([7.0, 8.0]),
                     dt=np.array([0.0, 0.05]))
    path = io.write_scan(tmp_path, scan)
    assert os.path.basename(path) == "12.345678901.ply"
    back = io.read_scan(path)
    assert back.scan_start == pytest.approx(scan.scan_start, abs=1e-9)
    assert np.allclose(back.points, scan.points)
    assert np.allclose(back.dt, scan.dt)


def test_scan_dir_sorted(tmp_path):
    for t0 in (0.3, 0.1, 0.2):
        io.write_scan(tmp_path, LidarScan(
            scan_start=t0, points=np.array([[1.0, 0, 0]]),
            intensity=np.zeros(1), dt=np.zeros(1)))
    scans = io.read_scan_dir(tmp_path)
    assert [s.scan_start for s in scans] == [0.1, 0.2, 0.3]


def test_scan_dir_empty(tmp_path):
    with pytest.raises(DataError):
        io.read_scan_dir(tmp_path)


def test_scan_bad_filename(tmp_path):
    path = tmp_path / "not-a-time.ply"
    io.write_ply(path, np.array([[1.0, 0, 0]]))
    with pytest.raises(DataError):
        io.read_scan(path)


# ------------------------------------------------------------ key-value files

def test_key_values_round_trip(tmp_path):
    path = tmp_path / "kv.txt"
    io.write_key_values(path, {"alpha": 1, "beta": "two"})
    back = io.read_key_values(path)
    assert back == {"alpha": "1", "beta": "two"}


def test_key_values_skips_comments(tmp_path):
    path = tmp_path / "kv.txt"
    path.write_text("# header\nkey: value\n\nother = 3\n")
    assert io.read_key_values(path) == {"key": "value", "other": "3"}


def test_camera_model_parse(tmp_path):
    path = tmp_path / "cam.txt"
    path.write_text("fx: 500\nfy: 510\ncx: 320\ncy: 240\n"
                    "width: 640\nheight: 480\n"
                    "extrinsic: 0.1 0.2 0.3 0 0 0 1\n")
    cam = io.read_camera_model(path)
    assert cam.fx == 500 and cam.height == 480
    assert np.allclose(cam.t_camera_lidar.translation, [0.1, 0.2, 0.3])
    assert cam.t_camera_lidar.rotation.approx_equal(Rotation.identity(), 1e-9)


def test_camera_model_missing_key(tmp_path):
    path = tmp_path / "cam.txt"
    path.write_text("fx: 500\n")
    with pytest.raises(DataError):
        io.read_camera_model(path)


# --------------------------------------------------------------- atomic write

def test_atomic_write_no_temp_left_behind(tmp_path):
    path = tmp_path / "out.txt"
    io.atomic_write_text(path, "hello\n")
    assert path.read_text() == "hello\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
