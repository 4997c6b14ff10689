"""File formats: TUM trajectories, timestamp/IMU CSV, PLY point clouds,
camera parameter files, key-value sidecars, and report writing.

TUM line: `t tx ty tz qx qy qz qw`, space-separated, `#` comments.
PLY: ASCII or binary_little_endian, properties x y z (float32/float64),
optional intensity, optional per-point time (float64 seconds).
"""
from __future__ import annotations

import csv
import io as _io
import os
import tempfile

import numpy as np

from .clocksync import TimestampPair
from .core import Pose, Rotation, Trajectory
from .errors import DataError
from .mapping import CameraModel, LidarScan, PointCloud
from .tempcal import ImuSample


# ---------------------------------------------------------------- atomic IO

def atomic_write(path, data: bytes):
    """Write via temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode())


# ------------------------------------------------------------- trajectories

def read_tum(path) -> Trajectory:
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(
                    f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                t, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
            poses.append(Pose(t, Rotation(np.array([qw, qx, qy, qz])),
                              np.array([tx, ty, tz])))
    if not poses:
        raise DataError(f"{path}: no poses found")
    return Trajectory(poses)


def format_tum(traj: Trajectory) -> str:
    lines = []
    for p in traj:
        qw, qx, qy, qz = p.rotation.q
        tx, ty, tz = p.translation
        lines.append(f"{p.t:.9f} {tx:.9f} {ty:.9f} {tz:.9f} "
                     f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}")
    return "\n".join(lines) + "\n"


def write_tum(path, traj: Trajectory):
    atomic_write_text(path, format_tum(traj))


# ---------------------------------------------------------------- CSV files

def read_timestamp_pairs(path) -> list:
    pairs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or \
                not {"sensor_time", "host_time"} <= set(reader.fieldnames):
            raise DataError(
                f"{path}: expected header sensor_time,host_time")
        for row in reader:
            pairs.append(TimestampPair(float(row["sensor_time"]),
                                       float(row["host_time"])))
    if not pairs:
        raise DataError(f"{path}: no timestamp pairs")
    return pairs


def write_timestamp_pairs(path, pairs):
    buf = _io.StringIO()
    buf.write("sensor_time,host_time\n")
    for p in pairs:
        buf.write(f"{p.sensor_time:.9f},{p.host_time:.9f}\n")
    atomic_write_text(path, buf.getvalue())


IMU_FIELDS = ("t", "gx", "gy", "gz", "ax", "ay", "az")


def read_imu_csv(path) -> list:
    samples = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or \
                not set(IMU_FIELDS) <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header {','.join(IMU_FIELDS)}")
        for row in reader:
            samples.append(ImuSample(
                t=float(row["t"]),
                gyro=np.array([float(row["gx"]), float(row["gy"]),
                               float(row["gz"])]),
                accel=np.array([float(row["ax"]), float(row["ay"]),
                                float(row["az"])])))
    if not samples:
        raise DataError(f"{path}: no IMU samples")
    return samples


def write_imu_csv(path, samples):
    buf = _io.StringIO()
    buf.write(",".join(IMU_FIELDS) + "\n")
    for s in samples:
        gx, gy, gz = s.gyro
        ax, ay, az = s.accel
        buf.write(f"{s.t:.9f},{gx:.9f},{gy:.9f},{gz:.9f},"
                  f"{ax:.9f},{ay:.9f},{az:.9f}\n")
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------- PLY

_PLY_TYPES = {"float": "<f4", "float32": "<f4",
              "double": "<f8", "float64": "<f8",
              "uchar": "u1", "uint8": "u1",
              "int": "<i4", "int32": "<i4",
              "uint": "<u4", "uint32": "<u4",
              "short": "<i2", "ushort": "<u2"}


def read_ply(path):
    """Read a PLY file; returns (xyz, {property: array}).

    Handles ASCII and binary_little_endian with scalar vertex properties.
    """
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise DataError(f"{path}: not a PLY file")
        fmt = None
        count = None
        props = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise DataError(f"{path}: truncated header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise DataError(f"{path}: list vertex properties unsupported")
                if tokens[1] not in _PLY_TYPES:
                    raise DataError(f"{path}: unsupported type {tokens[1]}")
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise DataError(f"{path}: unsupported format {fmt}")
        if count is None:
            raise DataError(f"{path}: no vertex element")
        dtype = np.dtype(props)
        if fmt == "ascii":
            data = np.loadtxt(f, dtype=float, max_rows=count, ndmin=2)
            if data.shape != (count, len(props)):
                raise DataError(f"{path}: vertex count mismatch")
            rec = np.zeros(count, dtype=dtype)
            for i, (name, _) in enumerate(props):
                rec[name] = data[:, i]
        else:
            rec = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype,
                                count=count)
    names = [n for n, _ in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise DataError(f"{path}: missing vertex property {axis}")
    xyz = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(float)
    extras = {n: np.asarray(rec[n]) for n in names if n not in ("x", "y", "z")}
    return xyz, extras


def write_ply(path, xyz, extras=None, binary: bool = True,
              coord_dtype: str = "float64"):
    extras = extras or {}
    n = len(xyz)
    ply_name = {"<f4": "float", "<f8": "double", "u1": "uchar",
                "<i4": "int", "<u4": "uint", "<i2": "short", "<u2": "ushort"}
    fields = [("x", _PLY_TYPES[coord_dtype]), ("y", _PLY_TYPES[coord_dtype]),
              ("z", _PLY_TYPES[coord_dtype])]
    for name, arr in extras.items():
        arr = np.asarray(arr)
        code = "u1" if arr.dtype == np.uint8 else "<f8"
        if name == "intensity":
            code = "<f4"
        fields.append((name, code))
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}"]
    header += [f"property {ply_name[c]} {name}" for name, c in fields]
    header.append("end_header")
    rec = np.zeros(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    for name, arr in extras.items():
        rec[name] = arr
    if binary:
        payload = "\n".join(header).encode() + b"\n" + rec.tobytes()
    else:
        body = _io.StringIO()
        for row in rec:
            body.write(" ".join(repr(float(v)) for v in row) + "\n")
        payload = ("\n".join(header) + "\n" + body.getvalue()).encode()
    atomic_write(path, payload)


def read_point_cloud(path) -> PointCloud:
    xyz, extras = read_ply(path)
    return PointCloud(xyz, intensity=extras.get("intensity"))


def write_point_cloud(path, cloud: PointCloud, binary: bool = True):
    extras = {}
    if cloud.intensity is not None:
        extras["intensity"] = cloud.intensity
    write_ply(path, cloud.xyz, extras, binary=binary)


def read_scan(path) -> LidarScan:
    """One sweep stored as PLY named by its scan_start seconds."""
    xyz, extras = read_ply(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        scan_start = float(stem)
    except ValueError as e:
        raise DataError(
            f"{path}: scan file name must be the scan_start seconds") from e
    n = len(xyz)
    return LidarScan(scan_start=scan_start, points=xyz,
                     intensity=extras.get("intensity", np.zeros(n)),
                     dt=extras.get("time", np.zeros(n)))


def write_scan(directory, scan: LidarScan, binary: bool = True) -> str:
    path = os.path.join(directory, f"{scan.scan_start:.9f}.ply")
    write_ply(path, scan.points,
              {"intensity": scan.intensity, "time": scan.dt}, binary=binary)
    return path


def read_scan_dir(directory) -> list:
    names = sorted(n for n in os.listdir(directory) if n.endswith(".ply"))
    if not names:
        raise DataError(f"{directory}: no .ply scans found")
    return [read_scan(os.path.join(directory, n)) for n in names]


# ------------------------------------------------------------ key-value text

def read_key_values(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" in line:
                key, _, value = line.partition(":")
            else:
                key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_key_values(path, mapping: dict):
    atomic_write_text(path, "".join(f"{k}: {v}\n" for k, v in mapping.items()))


def read_camera_model(path) -> CameraModel:
    """Key-value camera file: fx fy cx cy width height and `extrinsic` as
    7 numbers tx ty tz qx qy qz qw (T_camera_lidar)."""
    kv = read_key_values(path)
    try:
        nums = [float(x) for x in kv["extrinsic"].split()]
        if len(nums) != 7:
            raise DataError(f"{path}: extrinsic needs 7 numbers")
        tx, ty, tz, qx, qy, qz, qw = nums
        extrinsic = Pose(0.0, Rotation(np.array([qw, qx, qy, qz])),
                         np.array([tx, ty, tz]))
        return CameraModel(fx=float(kv["fx"]), fy=float(kv["fy"]),
                           cx=float(kv["cx"]), cy=float(kv["cy"]),
                           width=int(kv["width"]), height=int(kv["height"]),
                           t_camera_lidar=extrinsic)
    except KeyError as e:
        raise DataError(f"{path}: missing camera key {e}") from e
