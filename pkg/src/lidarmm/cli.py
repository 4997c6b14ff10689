"""Batch command-line frontend.

Exit codes: 0 success, 1 usage error, 2 data error, 3 algorithm failure
(low confidence / degenerate input). Errors print a single machine-parsable
line to stderr: `error: <kind>: <message>`.

Reports are deterministic: rerunning a subcommand with identical inputs,
flags, and seeds produces byte-identical report files. Wall time therefore
goes to stderr, never into report files.
"""
from __future__ import annotations

import argparse
import hashlib
import io as _stdio
import math
import os
import sys
import time

import numpy as np

from . import clocksync, io, mapping, simgen, tempcal, trajeval
from .core import Pose, so3_log
from .errors import AlgorithmError, DataError, ToolkitError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ALGORITHM = 3


class Report:
    """Key-value run report plus machine-readable metric rows."""

    def __init__(self, command):
        self.command = command
        self.inputs = []        # (name, path, sha256)
        self.params = []        # (name, value)
        self.metrics = []       # (name, length-or-empty, value, unit)
        self.warnings = []

    def add_input(self, name, path):
        digest = hashlib.sha256()
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
        self.inputs.append((name, path, digest.hexdigest()))

    def add_input_dir(self, name, directory):
        for fname in sorted(os.listdir(directory)):
            path = os.path.join(directory, fname)
            if os.path.isfile(path):
                self.add_input(f"{name}/{fname}", path)

    def add_param(self, name, value):
        self.params.append((name, value))

    def add_metric(self, name, value, unit="", length=""):
        self.metrics.append((name, length, value, unit))

    def warn(self, message):
        self.warnings.append(message)

    def text(self) -> str:
        out = _stdio.StringIO()
        out.write(f"command: {self.command}\n")
        for name, path, digest in self.inputs:
            out.write(f"input.{name}: {os.path.basename(path)} sha256={digest}\n")
        for name, value in self.params:
            out.write(f"param.{name}: {value}\n")
        for name, length, value, unit in self.metrics:
            tag = f"{name}[{length}]" if length != "" else name
            suffix = f" {unit}" if unit else ""
            out.write(f"{tag}: {value}{suffix}\n")
        for message in self.warnings:
            out.write(f"warning: {message}\n")
        return out.getvalue()

    def csv(self) -> str:
        rows = ["metric,length,value"]
        for name, length, value, unit in self.metrics:
            rows.append(f"{name},{length},{value}")
        return "\n".join(rows) + "\n"

    def emit(self, args):
        sys.stdout.write(self.text())
        if getattr(args, "output", None):
            io.atomic_write_text(args.output, self.text())
        if getattr(args, "csv", None):
            io.atomic_write_text(args.csv, self.csv())


def _fmt(value, digits=6):
    return f"{value:.{digits}f}"


def _pose_line(pose: Pose) -> str:
    qw, qx, qy, qz = pose.rotation.q
    tx, ty, tz = pose.translation
    return (f"{tx:.9f} {ty:.9f} {tz:.9f} "
            f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}")


# ------------------------------------------------------------- subcommands

def cmd_sync(args):
    report = Report("sync")
    report.add_input("pairs", args.pairs)
    report.add_param("warmup", args.warmup)
    pairs = io.read_timestamp_pairs(args.pairs)
    if args.causal:
        model = None
        for _, model in clocksync.fit_clock_causal(pairs, args.warmup):
            pass
        report.add_param("mode", "causal")
    else:
        model = clocksync.fit_clock_batch(pairs)
        report.add_param("mode", "batch")
    report.add_metric("skew", _fmt(model.skew, 12))
    report.add_metric("offset", _fmt(model.offset, 9), "s")
    report.add_metric("support_count", model.support_count)
    report.add_metric("mean_excess", _fmt(model.mean_excess, 9), "s")
    if model.skew_suspicious:
        report.warn(f"skew {model.skew} deviates from 1 by more than "
                    f"{clocksync.SKEW_SANITY}")
    if args.smoothed:
        smoothed = clocksync.smooth_timestamps(pairs, model)
        io.atomic_write_text(
            args.smoothed,
            "sensor_time,smoothed_host_time\n" + "".join(
                f"{p.sensor_time:.9f},{t:.9f}\n"
                for p, t in zip(pairs, smoothed)))
    if args.figures:
        from . import figures
        figures.clock_fit_figure(args.figures, pairs, model)
    report.emit(args)
    return EXIT_OK


def cmd_calib(args):
    report = Report("calib")
    report.add_input("imu", args.imu)
    report.add_input("odometry", args.odometry)
    report.add_param("window", args.window)
    report.add_param("period", args.period)
    imu = io.read_imu_csv(args.imu)
    traj = io.read_tum(args.odometry)
    offset, rotation = tempcal.calibrate_lidar_imu(
        imu, traj, window=args.window, period=args.period)
    axis_angle = so3_log(rotation.rotation)
    report.add_metric("time_offset", _fmt(1e3 * offset.t_d, 4), "ms")
    report.add_metric("peak_correlation", _fmt(offset.peak_correlation, 4))
    report.add_metric("rotation_angle",
                      _fmt(math.degrees(np.linalg.norm(axis_angle)), 4), "deg")
    report.add_metric("rotation_axis_angle_rad",
                      " ".join(_fmt(v, 9) for v in axis_angle))
    qw, qx, qy, qz = rotation.rotation.q
    report.add_metric("rotation_quat_xyzw",
                      f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}")
    report.add_metric("inlier_count", rotation.inlier_count)
    report.add_metric("rms_residual", _fmt(rotation.rms_residual, 6), "rad/s")
    if args.figures:
        from . import figures
        imu_times = np.array([s.t for s in imu])
        imu_gyro = np.array([s.gyro for s in imu])
        lt, lo = tempcal.angular_rates_from_trajectory(traj)
        figures.rate_correlation_figure(
            args.figures,
            tempcal.rate_norm_series(imu_times, imu_gyro, args.period),
            tempcal.rate_norm_series(lt, lo, args.period), offset)
    report.emit(args)
    return EXIT_OK


def _load_matched(args):
    est = io.read_tum(args.estimate)
    ref = io.read_tum(args.reference)
    return est, ref, trajeval.associate(est, ref, args.max_dt)


def cmd_align(args):
    report = Report("align")
    report.add_input("estimate", args.estimate)
    report.add_input("reference", args.reference)
    report.add_param("max_dt", args.max_dt)
    report.add_param("with_scale", args.with_scale)
    est, ref, matched = _load_matched(args)
    result = trajeval.umeyama_align(matched, with_scale=args.with_scale)
    report.add_metric("matches", len(matched))
    report.add_metric("transform", _pose_line(result.transform))
    report.add_metric("scale", _fmt(result.scale, 9))
    report.add_metric("residual_rms", _fmt(result.residual_rms, 6), "m")
    if result.degenerate:
        report.warn("matched translations are collinear or coincident; "
                    "alignment rotation is not fully constrained")
    if args.aligned_out:
        io.write_tum(args.aligned_out, est.transformed(result.transform))
    report.emit(args)
    return EXIT_OK


def cmd_ate(args):
    report = Report("ate")
    report.add_input("estimate", args.estimate)
    report.add_input("reference", args.reference)
    report.add_param("max_dt", args.max_dt)
    est, ref, matched = _load_matched(args)
    alignment = trajeval.umeyama_align(matched).transform
    result = trajeval.ate(matched, alignment)
    report.add_metric("matches", len(matched))
    report.add_metric("ate_rmse_translation",
                      _fmt(100.0 * result.rmse_translation, 4), "cm")
    report.add_metric("ate_rmse_rotation", _fmt(result.rmse_rotation, 4), "deg")
    if args.figures:
        from . import figures
        figures.trajectory_figure(args.figures, est.transformed(alignment), ref)
        figures.ate_error_figure(args.figures, result)
    report.emit(args)
    return EXIT_OK


def cmd_rpe(args):
    report = Report("rpe")
    report.add_input("estimate", args.estimate)
    report.add_input("reference", args.reference)
    report.add_param("max_dt", args.max_dt)
    lengths = tuple(float(x) for x in args.lengths.split(","))
    report.add_param("lengths", args.lengths)
    est = io.read_tum(args.estimate)
    ref = io.read_tum(args.reference)
    result = trajeval.rpe(est, ref, lengths=lengths, max_dt=args.max_dt)
    report.add_metric("rpe_translation", _fmt(result.translation_percent, 4),
                      "%")
    report.add_metric("rpe_rotation", _fmt(result.rotation_deg_per_m, 6),
                      "deg/m")
    for length in sorted(result.per_length):
        trans, rot, count = result.per_length[length]
        report.add_metric("rpe_translation", _fmt(trans, 4), "%",
                          length=f"{length:g}")
        report.add_metric("rpe_rotation", _fmt(rot, 6), "deg/m",
                          length=f"{length:g}")
        report.add_metric("rpe_samples", count, length=f"{length:g}")
    if args.figures:
        from . import figures
        figures.rpe_figure(args.figures, result)
    report.emit(args)
    return EXIT_OK


def cmd_undistort(args):
    report = Report("undistort")
    report.add_input_dir("scans", args.scans)
    report.add_input("trajectory", args.trajectory)
    scans = io.read_scan_dir(args.scans)
    traj = io.read_tum(args.trajectory)
    os.makedirs(args.out, exist_ok=True)
    for scan in scans:
        io.write_scan(args.out, mapping.undistort_scan(scan, traj))
    report.add_metric("scans", len(scans))
    report.emit(args)
    return EXIT_OK


def cmd_aggregate(args):
    report = Report("aggregate")
    report.add_input_dir("scans", args.scans)
    report.add_input("trajectory", args.trajectory)
    report.add_param("undistort", not args.no_undistort)
    scans = io.read_scan_dir(args.scans)
    traj = io.read_tum(args.trajectory)
    cloud = mapping.aggregate_map(scans, traj, undistort=not args.no_undistort)
    io.write_point_cloud(args.out, cloud)
    report.add_metric("scans", len(scans))
    report.add_metric("points", len(cloud))
    report.emit(args)
    return EXIT_OK


BYTES_PER_POINT = 16  # binary on-disk record used for the size target


def cmd_downsample(args):
    report = Report("downsample")
    report.add_input("cloud", args.cloud)
    if args.target_points is None and args.target_mb is None:
        raise DataError("one of --target-points or --target-mb is required")
    target = args.target_points
    if target is None:
        target = max(1, int(args.target_mb * 1e6 / BYTES_PER_POINT))
    report.add_param("target_points", target)
    report.add_param("seed", args.seed)
    cloud = io.read_point_cloud(args.cloud)
    out = mapping.random_downsample(cloud, target, seed=args.seed)
    io.write_point_cloud(args.out, out)
    report.add_metric("points_in", len(cloud))
    report.add_metric("points_out", len(out))
    report.emit(args)
    return EXIT_OK


def cmd_c2c(args):
    report = Report("c2c")
    report.add_input("compared", args.compared)
    report.add_input("reference", args.reference)
    report.add_param("radius", args.radius)
    report.add_param("max_dist", args.max_dist)
    compared = io.read_point_cloud(args.compared)
    reference = io.read_point_cloud(args.reference)
    result = mapping.cloud_to_cloud_distance(
        compared, reference, radius=args.radius, max_dist=args.max_dist)
    report.add_metric("mean_distance", _fmt(result.mean, 6), "m")
    report.add_metric("excluded_points", result.excluded_count)
    if args.both_directions:
        back = mapping.cloud_to_cloud_distance(
            reference, compared, radius=args.radius, max_dist=args.max_dist)
        report.add_metric("mean_distance_reverse", _fmt(back.mean, 6), "m")
        report.add_metric("excluded_points_reverse", back.excluded_count)
    if args.figures:
        from . import figures
        figures.distance_histogram_figure(args.figures, result)
    report.emit(args)
    return EXIT_OK


def cmd_icp(args):
    report = Report("icp")
    report.add_input("compared", args.compared)
    report.add_input("reference", args.reference)
    report.add_param("max_iterations", args.max_iterations)
    report.add_param("tolerance", args.tolerance)
    report.add_param("max_corr_dist", args.max_corr_dist)
    compared = io.read_point_cloud(args.compared)
    reference = io.read_point_cloud(args.reference)
    result = mapping.icp_refine(compared, reference,
                                max_iterations=args.max_iterations,
                                tolerance=args.tolerance,
                                max_corr_dist=args.max_corr_dist)
    report.add_metric("transform", _pose_line(result.transform))
    report.add_metric("iterations", result.iterations)
    report.add_metric("converged", result.converged)
    report.add_metric("final_residual", _fmt(result.residuals[-1], 9), "m")
    if result.unconstrained_directions:
        report.warn(f"{result.unconstrained_directions} transform directions "
                    f"unconstrained by the geometry")
    if not result.converged:
        report.warn("icp did not converge; last iterate returned")
    if args.refined_out:
        io.write_point_cloud(args.refined_out,
                             compared.transformed(result.transform))
    report.emit(args)
    return EXIT_OK


def cmd_project(args):
    report = Report("project")
    report.add_input("cloud", args.cloud)
    report.add_input("camera", args.camera)
    cloud = io.read_point_cloud(args.cloud)
    cam = io.read_camera_model(args.camera)
    uvd = mapping.project_to_image(cloud, cam)
    io.atomic_write_text(args.out, "u,v,depth\n" + "".join(
        f"{u:.4f},{v:.4f},{d:.4f}\n" for u, v, d in uvd))
    report.add_metric("points_in", len(cloud))
    report.add_metric("points_projected", len(uvd))
    report.emit(args)
    return EXIT_OK


def cmd_simgen(args):
    report = Report("simgen")
    cfg = simgen.SimConfig(
        duration=args.duration,
        seed=args.seed,
        time_offset=args.time_offset,
        lidar_rotation=tuple(
            math.radians(args.rotation_deg) * np.asarray(
                [float(x) for x in args.rotation_axis.split(",")])
            / max(1e-12, np.linalg.norm(
                [float(x) for x in args.rotation_axis.split(",")]))),
        gyro_noise_density=args.gyro_noise,
        clock_skew=args.clock_skew,
        min_delay=args.min_delay,
        jitter_max=args.jitter_max,
    )
    for key, value in sorted(simgen.ground_truth_sidecar(cfg).items()):
        report.add_param(key, value)
    os.makedirs(args.out, exist_ok=True)
    traj, analytic = simgen.gen_trajectory(cfg)
    io.write_tum(os.path.join(args.out, "groundtruth.tum"), traj)
    io.write_imu_csv(os.path.join(args.out, "imu.csv"),
                     simgen.gen_imu(cfg, analytic))
    io.write_tum(os.path.join(args.out, "odometry.tum"),
                 simgen.gen_lidar_odometry(cfg, analytic))
    io.write_timestamp_pairs(os.path.join(args.out, "pairs.csv"),
                             simgen.gen_timestamp_pairs(cfg))
    io.write_key_values(os.path.join(args.out, "groundtruth.txt"),
                        simgen.ground_truth_sidecar(cfg))
    if args.scans:
        scan_dir = os.path.join(args.out, "scans")
        os.makedirs(scan_dir, exist_ok=True)
        scans, _ = simgen.gen_room_scans(cfg, analytic)
        for scan in scans:
            io.write_scan(scan_dir, scan)
        report.add_metric("scans", len(scans))
    report.add_metric("output_dir", args.out)
    report.emit(args)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarmm",
        description="Calibration, synchronization, and accuracy evaluation "
                    "for lidar-phone mobile mapping data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-o", "--output", help="write the report to this file")
        p.add_argument("--csv", help="write metrics as CSV (metric,length,value)")
        p.add_argument("--figures", metavar="DIR",
                       help="render figures into this directory")

    p = sub.add_parser("sync", help="fit a sensor-to-host clock model")
    p.add_argument("pairs", help="timestamp-pair CSV (sensor_time,host_time)")
    p.add_argument("--causal", action="store_true",
                   help="stream causally instead of batch fitting")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--smoothed", help="write smoothed host timestamps CSV")
    common(p)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("calib", help="lidar-IMU time offset and rotation")
    p.add_argument("imu", help="IMU CSV (t,gx,gy,gz,ax,ay,az)")
    p.add_argument("odometry", help="lidar odometry trajectory, TUM format")
    p.add_argument("--window", type=float, default=tempcal.DEFAULT_WINDOW,
                   help="correlation search half-window [s]")
    p.add_argument("--period", type=float, default=tempcal.DEFAULT_PERIOD,
                   help="rate-norm resampling period [s]")
    common(p)
    p.set_defaults(func=cmd_calib)

    for name, func, extra in (("align", cmd_align, True),
                              ("ate", cmd_ate, False),
                              ("rpe", cmd_rpe, False)):
        p = sub.add_parser(name, help=f"{name} between two TUM trajectories")
        p.add_argument("estimate")
        p.add_argument("reference")
        p.add_argument("--max-dt", type=float, default=trajeval.DEFAULT_MAX_DT)
        if name == "align":
            p.add_argument("--with-scale", action="store_true")
            p.add_argument("--aligned-out",
                           help="write the aligned estimate as TUM")
        if name == "rpe":
            p.add_argument("--lengths", default="10,20,50,100",
                           help="comma-separated segment lengths [m]")
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("undistort", help="motion-compensate scans")
    p.add_argument("scans", help="directory of per-scan PLY files")
    p.add_argument("trajectory", help="TUM trajectory")
    p.add_argument("out", help="output scan directory")
    common(p)
    p.set_defaults(func=cmd_undistort)

    p = sub.add_parser("aggregate", help="build a world-frame map from scans")
    p.add_argument("scans")
    p.add_argument("trajectory")
    p.add_argument("out", help="output PLY")
    p.add_argument("--no-undistort", action="store_true")
    common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("downsample", help="random uniform downsampling")
    p.add_argument("cloud")
    p.add_argument("out")
    p.add_argument("--target-points", type=int)
    p.add_argument("--target-mb", type=float,
                   help=f"size target; {BYTES_PER_POINT} bytes/point")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("c2c", help="cloud-to-cloud distance with plane model")
    p.add_argument("compared")
    p.add_argument("reference")
    p.add_argument("--radius", type=float, default=mapping.DEFAULT_C2C_RADIUS)
    p.add_argument("--max-dist", type=float,
                   default=mapping.DEFAULT_C2C_MAX_DIST)
    p.add_argument("--both-directions", action="store_true")
    common(p)
    p.set_defaults(func=cmd_c2c)

    p = sub.add_parser("icp", help="point-to-plane ICP refinement")
    p.add_argument("compared")
    p.add_argument("reference")
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--max-corr-dist", type=float, default=1.0)
    p.add_argument("--refined-out", help="write the refined compared cloud")
    common(p)
    p.set_defaults(func=cmd_icp)

    p = sub.add_parser("project", help="project a cloud into a camera image")
    p.add_argument("cloud")
    p.add_argument("camera", help="camera key-value parameter file")
    p.add_argument("out", help="output CSV (u,v,depth)")
    common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("simgen", help="generate a synthetic dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-offset", type=float, default=0.012,
                   help="injected lidar time offset [s]")
    p.add_argument("--rotation-deg", type=float, default=20.0,
                   help="injected lidar-to-IMU rotation angle [deg]")
    p.add_argument("--rotation-axis", default="1,1,1")
    p.add_argument("--gyro-noise", type=float, default=0.001,
                   help="gyro noise density [rad/s/sqrt(Hz)]")
    p.add_argument("--clock-skew", type=float, default=1e-5)
    p.add_argument("--min-delay", type=float, default=0.002)
    p.add_argument("--jitter-max", type=float, default=0.010)
    p.add_argument("--scans", action="store_true",
                   help="also ray-cast room scans")
    common(p)
    p.set_defaults(func=cmd_simgen)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    start = time.monotonic()
    try:
        code = args.func(args)
    except AlgorithmError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ALGORITHM
    except (DataError, ToolkitError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    print(f"wall_time: {time.monotonic() - start:.3f} s", file=sys.stderr)
    return code


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
