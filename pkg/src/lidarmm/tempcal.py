"""Lidar-IMU temporal and rotational calibration.

The time offset is found by cross-correlating angular-rate norms (norms are
rotation-invariant, so the offset is observable before the extrinsic
rotation), then the lidar-to-IMU rotation is solved by truncated least
squares over time-aligned angular-rate vector pairs.

Sign convention: the estimated offset is ADDED to lidar message timestamps
to express them on the IMU timeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Rotation, Trajectory, so3_log
from .errors import (DegenerateMotionError, InsufficientDataError,
                     LowConfidenceError, NoOverlapError, OrderingError)

DEFAULT_PERIOD = 0.01     # 100 Hz resampling of rate norms
DEFAULT_WINDOW = 0.5      # correlation search half-window, seconds
MIN_OVERLAP = 10.0        # seconds of series overlap required at any shift
MIN_PEAK_CORRELATION = 0.5
RESIDUAL_FLOOR = 0.02     # rad/s, keeps the MAD gate from collapsing
MAX_TLS_ITERATIONS = 10


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray    # rad/s
    accel: np.ndarray   # m/s^2


@dataclass(frozen=True)
class RateSeries:
    """Angular-rate norms on a uniform time grid."""

    start: float
    period: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.period <= 0:
            raise ValueError("period must be positive")
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("values must be finite nonnegative 1-D")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.start + self.period * np.arange(len(self.values))


@dataclass(frozen=True)
class TimeOffsetEstimate:
    t_d: float                  # add to lidar timestamps -> IMU timeline
    peak_correlation: float
    search_window: float


@dataclass(frozen=True)
class RotationEstimate:
    rotation: Rotation          # lidar -> IMU
    inlier_count: int
    rms_residual: float         # rad/s
    iterations: int = 0


def angular_rates_from_trajectory(traj: Trajectory):
    """Body-frame angular rates from consecutive pose pairs.

    Returns (times, omegas): finite-difference rate over each interval,
    stamped at the interval midpoint, expressed in the earlier pose's body
    frame.
    """
    if len(traj) < 2:
        raise InsufficientDataError("need at least 2 poses for angular rates")
    times = traj.times
    mid = 0.5 * (times[:-1] + times[1:])
    dt = np.diff(times)
    omegas = np.empty((len(traj) - 1, 3))
    prev = traj[0]
    for k in range(1, len(traj)):
        cur = traj[k]
        omegas[k - 1] = so3_log(prev.rotation.inverse() * cur.rotation) / dt[k - 1]
        prev = cur
    return mid, omegas


def rate_norm_series(times, vectors, period: float) -> RateSeries:
    """Resample |omega| onto a uniform grid spanning the input time range."""
    times = np.asarray(times, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    if len(times) < 2:
        raise InsufficientDataError("need at least 2 samples")
    if np.any(np.diff(times) <= 0):
        raise OrderingError("sample times must be strictly increasing")
    if period <= 0:
        raise ValueError("period must be positive")
    span = times[-1] - times[0]
    if period >= span:
        raise InsufficientDataError(
            f"period {period} covers the whole input span {span}")
    norms = np.linalg.norm(vectors, axis=1)
    n = int(math.floor(span / period)) + 1
    grid = times[0] + period * np.arange(n)
    values = np.interp(grid, times, norms)
    return RateSeries(start=float(times[0]), period=period, values=values)


def _correlation_at_shifts(ref: RateSeries, moving: RateSeries, window: float):
    """Pearson correlation of ref[i] vs moving[i + m] for all integer m
    whose implied lag |tau_m| <= window.

    tau_m = (ref.start - moving.start) - m * period, the amount to add to
    `moving` timestamps so its samples line up with `ref`.
    """
    p = ref.period
    base = ref.start - moving.start
    m_lo = int(math.ceil((base - window) / p))
    m_hi = int(math.floor((base + window) / p))
    shifts, taus, corrs = [], [], []
    a, b = ref.values, moving.values
    min_len = max(2, int(round(MIN_OVERLAP / p)))
    for m in range(m_lo, m_hi + 1):
        lo_a = max(0, -m)
        hi_a = min(len(a), len(b) - m)
        if hi_a - lo_a < min_len:
            continue
        x = a[lo_a:hi_a]
        y = b[lo_a + m:hi_a + m]
        x = x - x.mean()
        y = y - y.mean()
        denom = math.sqrt(float(x @ x) * float(y @ y))
        c = float(x @ y) / denom if denom > 0 else 0.0
        shifts.append(m)
        taus.append(base - m * p)
        corrs.append(c)
    return np.array(shifts), np.array(taus), np.array(corrs)


def estimate_time_offset(imu_series: RateSeries, lidar_series: RateSeries,
                         window: float = DEFAULT_WINDOW) -> TimeOffsetEstimate:
    """Offset maximizing zero-normalized cross-correlation of the norms.

    Integer-shift search within +-window, then parabolic refinement through
    the peak and its neighbors.
    """
    if abs(imu_series.period - lidar_series.period) > 1e-12:
        raise ValueError("series must share the same period")
    shifts, taus, corrs = _correlation_at_shifts(imu_series, lidar_series, window)
    if len(corrs) == 0:
        raise NoOverlapError(
            f"series overlap shorter than {MIN_OVERLAP} s at every shift "
            f"within +-{window} s")
    k = int(np.argmax(corrs))
    peak = float(corrs[k])
    if peak < MIN_PEAK_CORRELATION:
        raise LowConfidenceError(
            f"correlation peak {peak:.3f} below {MIN_PEAK_CORRELATION}", peak)
    tau = float(taus[k])
    # Sub-sample parabolic refinement; only when both neighbors exist and are
    # contiguous shifts.
    if 0 < k < len(corrs) - 1 and shifts[k + 1] - shifts[k - 1] == 2:
        c0, c1, c2 = corrs[k - 1], corrs[k], corrs[k + 1]
        denom = c0 - 2 * c1 + c2
        if denom < 0:
            delta = 0.5 * (c0 - c2) / denom
            # taus decrease with m, so a +delta in m is -delta in tau.
            tau -= max(-0.5, min(0.5, float(delta))) * imu_series.period
    return TimeOffsetEstimate(t_d=tau, peak_correlation=peak,
                              search_window=window)


def _procrustes(src: np.ndarray, dst: np.ndarray) -> Rotation:
    """Rotation R minimizing sum |dst - R src|^2 (SVD, det-corrected)."""
    cov = dst.T @ src
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return Rotation.from_matrix(r)


def _check_excitation(vectors: np.ndarray):
    sv = np.linalg.svd(vectors, compute_uv=False)
    if len(sv) < 2 or sv[1] < max(1e-8, 1e-4 * sv[0]):
        raise DegenerateMotionError(
            "angular rates are collinear; rotation about the excitation axis "
            "is unobservable")


def estimate_rotation_tls(pairs) -> RotationEstimate:
    """Truncated least squares for the lidar-to-IMU rotation.

    pairs: sequence of (omega_imu, omega_lidar), time-aligned by the caller.
    Repeats Procrustes solves, dropping pairs whose residual norm exceeds
    max(3 * MAD, 0.02 rad/s), until the inlier set is stable.
    """
    omega_imu = np.asarray([p[0] for p in pairs], dtype=float)
    omega_lidar = np.asarray([p[1] for p in pairs], dtype=float)
    if len(omega_imu) < 3:
        raise InsufficientDataError("need at least 3 rate pairs")
    inliers = np.ones(len(omega_imu), dtype=bool)
    rotation = None
    iterations = 0
    for iterations in range(1, MAX_TLS_ITERATIONS + 1):
        src = omega_lidar[inliers]
        dst = omega_imu[inliers]
        if len(src) < 3:
            raise InsufficientDataError(
                f"only {len(src)} inliers left after truncation")
        _check_excitation(src)
        rotation = _procrustes(src, dst)
        residuals = np.linalg.norm(
            omega_imu - omega_lidar @ rotation.matrix().T, axis=1)
        med = np.median(residuals[inliers])
        mad = np.median(np.abs(residuals[inliers] - med))
        threshold = max(3.0 * mad, RESIDUAL_FLOOR)
        new_inliers = residuals <= threshold
        if np.array_equal(new_inliers, inliers):
            break
        inliers = new_inliers
    final = residuals[inliers]
    return RotationEstimate(rotation=rotation,
                            inlier_count=int(np.sum(inliers)),
                            rms_residual=float(np.sqrt(np.mean(final ** 2))),
                            iterations=iterations)


def calibrate_lidar_imu(imu_samples, lidar_traj: Trajectory,
                        window: float = DEFAULT_WINDOW,
                        period: float = DEFAULT_PERIOD):
    """Full pipeline: time offset by norm correlation, then rotation by TLS.

    Returns (TimeOffsetEstimate, RotationEstimate). Errors from the stages
    are re-raised with a stage label prepended.
    """
    imu_times = np.array([s.t for s in imu_samples])
    imu_gyro = np.array([s.gyro for s in imu_samples])

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as e:
            e.args = (f"[{name}] {e.args[0] if e.args else e}",) + e.args[1:]
            raise

    lidar_times, lidar_omega = stage(
        "odometry-rates", angular_rates_from_trajectory, lidar_traj)
    imu_series = stage("imu-norms", rate_norm_series, imu_times, imu_gyro, period)
    lidar_series = stage("lidar-norms", rate_norm_series,
                         lidar_times, lidar_omega, period)
    offset = stage("time-offset", estimate_time_offset,
                   imu_series, lidar_series, window)

    # Shift lidar rate timestamps onto the IMU timeline and pair with
    # componentwise-interpolated IMU rates.
    shifted = lidar_times + offset.t_d
    keep = (shifted >= imu_times[0]) & (shifted <= imu_times[-1])
    shifted = shifted[keep]
    lidar_vecs = lidar_omega[keep]
    imu_vecs = np.column_stack([
        np.interp(shifted, imu_times, imu_gyro[:, i]) for i in range(3)])
    rotation = stage("rotation-tls", estimate_rotation_tls,
                     list(zip(imu_vecs, lidar_vecs)))
    return offset, rotation
