"""Synthetic-data generators with exact analytic ground truth.

Trajectories are sinusoidal in position and chirped two-axis in orientation,
so angular velocity has a closed form and the rate-norm signal is aperiodic
enough for unambiguous correlation. Every generator is deterministic under a
fixed seed.

Injection conventions (what the calibrators must recover):
  - time_offset is subtracted from the lidar odometry timestamps, so adding
    the estimated offset back restores the IMU timeline.
  - lidar_rotation (axis-angle, lidar -> IMU) right-multiplies the body
    orientation, so the odometry's body-frame rates are the IMU rates seen
    through that rotation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose, Trajectory, so3_exp
from .errors import DataError
from .mapping import LidarScan
from .clocksync import TimestampPair
from .tempcal import ImuSample

_E_X = np.array([1.0, 0.0, 0.0])
_E_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SimConfig:
    duration: float = 60.0
    seed: int = 0
    # Position: p_i(t) = trans_amplitude[i] * sin(2 pi trans_freq[i] t)
    trans_amplitude: tuple = (1.0, 0.8, 0.3)
    trans_freq: tuple = (0.11, 0.17, 0.23)
    # Orientation: R(t) = exp(theta1 e_z) exp(theta2 e_x) with chirped thetas
    rot_amplitude: tuple = (0.6, 0.4)           # rad
    rot_freq_start: tuple = (0.20, 0.31)        # Hz
    rot_chirp_rate: tuple = (0.010, 0.016)      # Hz per second
    imu_rate: float = 200.0
    odom_rate: float = 10.0
    gyro_noise_density: float = 0.0             # rad/s/sqrt(Hz)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    # Injected calibration parameters
    time_offset: float = 0.0                    # seconds
    lidar_rotation: tuple = (0.0, 0.0, 0.0)     # axis-angle, lidar -> IMU
    odom_pos_noise: float = 0.0                 # meters, per axis
    odom_rot_noise: float = 0.0                 # rad, per axis
    # Timestamp-pair stream
    pair_rate: float = 200.0
    clock_skew: float = 1e-5                    # host secs per sensor sec - 1
    clock_offset: float = 5.0                   # seconds
    min_delay: float = 0.002
    jitter_max: float = 0.010                   # uniform [0, jitter_max]
    # Room for scan generation
    room_dims: tuple = (10.0, 8.0, 3.0)
    points_per_scan: int = 360
    scan_elevations: tuple = (-0.4, 0.0, 0.4)   # rad

    def __post_init__(self):
        if self.duration <= 0:
            raise DataError("duration must be positive")
        if self.imu_rate <= 0 or self.odom_rate <= 0 or self.pair_rate <= 0:
            raise DataError("rates must be positive")
        if self.jitter_max < 0:
            raise DataError("jitter_max must be nonnegative")


def _chirp(amplitude, f0, rate, t):
    """Value and time derivative of A sin(2 pi (f0 t + rate t^2 / 2))."""
    phase = 2.0 * math.pi * (f0 * t + 0.5 * rate * t * t)
    freq = 2.0 * math.pi * (f0 + rate * t)
    return amplitude * math.sin(phase), amplitude * freq * math.cos(phase)


def make_analytic(cfg: SimConfig):
    """Closed-form trajectory query: t -> (Pose, omega_body, velocity)."""
    ax, ay, az = cfg.trans_amplitude
    fx, fy, fz = cfg.trans_freq

    def query(t: float):
        two_pi = 2.0 * math.pi
        pos = np.array([ax * math.sin(two_pi * fx * t),
                        ay * math.sin(two_pi * fy * t),
                        az * math.sin(two_pi * fz * t)])
        vel = np.array([ax * two_pi * fx * math.cos(two_pi * fx * t),
                        ay * two_pi * fy * math.cos(two_pi * fy * t),
                        az * two_pi * fz * math.cos(two_pi * fz * t)])
        th1, dth1 = _chirp(cfg.rot_amplitude[0], cfg.rot_freq_start[0],
                           cfg.rot_chirp_rate[0], t)
        th2, dth2 = _chirp(cfg.rot_amplitude[1], cfg.rot_freq_start[1],
                           cfg.rot_chirp_rate[1], t)
        r1 = so3_exp(th1 * _E_Z)
        r2 = so3_exp(th2 * _E_X)
        rot = r1 * r2
        # Body rate of exp(th1 ez) exp(th2 ex): B^T (th1' ez) + th2' ex
        omega = r2.inverse().apply(dth1 * _E_Z) + dth2 * _E_X
        return Pose(t, rot, pos), omega, vel

    return query


def gen_trajectory(cfg: SimConfig):
    """(Trajectory sampled at the odometry rate, analytic query function)."""
    analytic = make_analytic(cfg)
    n = int(math.floor(cfg.duration * cfg.odom_rate)) + 1
    poses = [analytic(k / cfg.odom_rate)[0] for k in range(n)]
    return Trajectory(poses), analytic


def gen_imu(cfg: SimConfig, analytic) -> list:
    """Gyro samples: analytic body rate + bias + white noise."""
    rng = np.random.default_rng([cfg.seed, 1])
    n = int(math.floor(cfg.duration * cfg.imu_rate)) + 1
    sigma = cfg.gyro_noise_density * math.sqrt(cfg.imu_rate)
    bias = np.asarray(cfg.gyro_bias, dtype=float)
    noise = rng.normal(0.0, sigma, size=(n, 3)) if sigma > 0 else np.zeros((n, 3))
    samples = []
    for k in range(n):
        t = k / cfg.imu_rate
        _, omega, _ = analytic(t)
        samples.append(ImuSample(t=t, gyro=omega + bias + noise[k],
                                 accel=np.zeros(3)))
    return samples


def gen_lidar_odometry(cfg: SimConfig, analytic) -> Trajectory:
    """Lidar odometry with the configured offset and rotation injected.

    Recorded timestamps are true times minus the offset; orientations carry
    the lidar-to-IMU rotation on the right; optional white pose noise.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    r_inj = so3_exp(np.asarray(cfg.lidar_rotation, dtype=float))
    n = int(math.floor(cfg.duration * cfg.odom_rate)) + 1
    poses = []
    for k in range(n):
        t = k / cfg.odom_rate
        pose, _, _ = analytic(t)
        rot = pose.rotation * r_inj
        trans = pose.translation.copy()
        if cfg.odom_rot_noise > 0:
            rot = rot * so3_exp(rng.normal(0.0, cfg.odom_rot_noise, 3))
        if cfg.odom_pos_noise > 0:
            trans = trans + rng.normal(0.0, cfg.odom_pos_noise, 3)
        poses.append(Pose(t - cfg.time_offset, rot, trans))
    return Trajectory(poses)


def gen_timestamp_pairs(cfg: SimConfig) -> list:
    """Regular sensor clock, jittered host arrivals.

    host = (1 + skew) * sensor + offset + min_delay + U(0, jitter_max).
    """
    rng = np.random.default_rng([cfg.seed, 3])
    n = int(math.floor(cfg.duration * cfg.pair_rate)) + 1
    sensor = np.arange(n) / cfg.pair_rate
    jitter = (rng.uniform(0.0, cfg.jitter_max, n) if cfg.jitter_max > 0
              else np.zeros(n))
    host = ((1.0 + cfg.clock_skew) * sensor + cfg.clock_offset
            + cfg.min_delay + jitter)
    return [TimestampPair(float(s), float(h)) for s, h in zip(sensor, host)]


def _ray_box(origin: np.ndarray, direction: np.ndarray, half: np.ndarray):
    """Distance to the first box face hit from inside; None if no hit."""
    best = None
    for axis in range(3):
        if direction[axis] == 0.0:
            continue
        for sign in (-1.0, 1.0):
            s = (sign * half[axis] - origin[axis]) / direction[axis]
            if s <= 1e-9:
                continue
            hit = origin + s * direction
            others = [a for a in range(3) if a != axis]
            if all(abs(hit[a]) <= half[a] + 1e-9 for a in others):
                if best is None or s < best[0]:
                    best = (s, axis * 2 + (0 if sign < 0 else 1))
    return best


def gen_room_scans(cfg: SimConfig, analytic):
    """Ray-cast a box room from the moving sensor.

    Returns (scans, truth) where truth[k] = (world_points, face_ids) giving
    the exact wall hits for scan k. Points sweep azimuth over the scan
    period, each stamped with its true capture offset dt.
    """
    dims = np.asarray(cfg.room_dims, dtype=float)
    if np.any(dims <= 0):
        raise DataError("room dimensions must be positive")
    half = dims / 2.0
    period = 1.0 / cfg.odom_rate
    n_scans = int(math.floor(cfg.duration * cfg.odom_rate))
    n_az = max(1, cfg.points_per_scan // max(1, len(cfg.scan_elevations)))
    scans, truth = [], []
    for k in range(n_scans):
        t0 = k * period
        pts, dts, world, faces = [], [], [], []
        for j in range(n_az):
            dt = (j / n_az) * period
            pose, _, _ = analytic(t0 + dt)
            azimuth = 2.0 * math.pi * j / n_az
            for elev in cfg.scan_elevations:
                d_sensor = np.array([math.cos(elev) * math.cos(azimuth),
                                     math.cos(elev) * math.sin(azimuth),
                                     math.sin(elev)])
                d_world = pose.rotation.apply(d_sensor)
                hit = _ray_box(pose.translation, d_world, half)
                if hit is None:
                    continue
                s, face = hit
                pts.append(s * d_sensor)    # exact sensor-frame point
                dts.append(dt)
                world.append(pose.translation + s * d_world)
                faces.append(face)
        scans.append(LidarScan(scan_start=t0,
                               points=np.array(pts),
                               intensity=np.zeros(len(pts)),
                               dt=np.array(dts)))
        truth.append((np.array(world), np.array(faces)))
    return scans, truth


def ground_truth_sidecar(cfg: SimConfig) -> dict:
    """Injected parameters, for the dataset sidecar file."""
    return {
        "seed": cfg.seed,
        "duration": cfg.duration,
        "time_offset": cfg.time_offset,
        "lidar_rotation_x": cfg.lidar_rotation[0],
        "lidar_rotation_y": cfg.lidar_rotation[1],
        "lidar_rotation_z": cfg.lidar_rotation[2],
        "clock_skew": cfg.clock_skew,
        "clock_offset": cfg.clock_offset,
        "min_delay": cfg.min_delay,
        "jitter_max": cfg.jitter_max,
    }
