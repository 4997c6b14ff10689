"""Figure rendering for CLI reports; files only, no interactive backends."""
from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _save(fig, directory, name):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def clock_fit_figure(directory, pairs, model):
    """Arrival excess over the fitted lower bound, per pair."""
    s = np.array([p.sensor_time for p in pairs])
    h = np.array([p.host_time for p in pairs])
    excess = h - model.predict(s)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(s, 1e3 * excess, ".", ms=2, label="arrival excess")
    ax.axhline(1e3 * model.mean_excess, color="C1", lw=1,
               label="mean excess")
    ax.set_xlabel("sensor time [s]")
    ax.set_ylabel("host time - lower bound [ms]")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, directory, "clock_fit.png")


def rate_correlation_figure(directory, imu_series, lidar_series, offset):
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=False)
    axes[0].plot(imu_series.times, imu_series.values, lw=0.8, label="imu")
    axes[0].plot(lidar_series.times + offset.t_d, lidar_series.values,
                 lw=0.8, label=f"lidar shifted {1e3 * offset.t_d:+.2f} ms")
    axes[0].set_xlabel("time [s]")
    axes[0].set_ylabel("|angular rate| [rad/s]")
    axes[0].legend(loc="upper right")
    axes[1].bar(["peak correlation"], [offset.peak_correlation], width=0.3)
    axes[1].set_ylim(0, 1.05)
    fig.tight_layout()
    return _save(fig, directory, "rate_correlation.png")


def trajectory_figure(directory, est, ref, name="trajectories.png"):
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(ref.translations[:, 0], ref.translations[:, 1], lw=1,
            label="reference")
    ax.plot(est.translations[:, 0], est.translations[:, 1], lw=1,
            label="estimate")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best")
    fig.tight_layout()
    return _save(fig, directory, name)


def ate_error_figure(directory, ate_result):
    err = ate_result.per_pose_errors
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(err[:, 0], lw=0.8)
    axes[0].set_ylabel("translation error [m]")
    axes[1].plot(err[:, 1], lw=0.8, color="C1")
    axes[1].set_ylabel("rotation error [deg]")
    axes[1].set_xlabel("matched pose index")
    fig.tight_layout()
    return _save(fig, directory, "ate_errors.png")


def rpe_figure(directory, rpe_result):
    lengths = sorted(rpe_result.per_length)
    trans = [rpe_result.per_length[l][0] for l in lengths]
    rot = [rpe_result.per_length[l][1] for l in lengths]
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].plot(lengths, trans, "o-")
    axes[0].set_xlabel("segment length [m]")
    axes[0].set_ylabel("translation error [%]")
    axes[1].plot(lengths, rot, "o-", color="C1")
    axes[1].set_xlabel("segment length [m]")
    axes[1].set_ylabel("rotation error [deg/m]")
    fig.tight_layout()
    return _save(fig, directory, "rpe_per_length.png")


def distance_histogram_figure(directory, result):
    vals = result.distances[np.isfinite(result.distances)]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(vals, bins=60, color="C0")
    ax.axvline(result.mean, color="C1", lw=1.2,
               label=f"mean {100 * result.mean:.2f} cm")
    ax.set_xlabel("cloud-to-cloud distance [m]")
    ax.set_ylabel("points")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, directory, "c2c_histogram.png")
