"""Acceptance suite: ten closed-loop criteria, one pass/fail line each.

Each test prints `criterion NN <title>: PASS (x.xx s)` (or FAIL) so a
`pytest tests/test_acceptance.py -s` run reads as a checklist. Tolerances
and runtime budgets are stated inline and asserted, never just logged.
"""
import functools
import math
import time

import numpy as np
import scipy.optimize

from lidarmm import clocksync, io, mapping, tempcal, trajeval
from lidarmm.cli import run as cli_run
from lidarmm.core import Pose, Rotation, Trajectory, so3_exp, so3_log
from lidarmm.errors import DegenerateMotionError
from lidarmm.mapping import PointCloud
from lidarmm.simgen import (SimConfig, gen_imu, gen_lidar_odometry,
                            gen_room_scans, gen_timestamp_pairs,
                            gen_trajectory, make_analytic)


def criterion(num, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"criterion {num:2d} {title}: FAIL")
                raise
            print(f"criterion {num:2d} {title}: PASS "
                  f"({time.perf_counter() - start:.2f} s)")
        return wrapper
    return deco


# --------------------------------------------------------------- 1: clock sync

@criterion(1, "clock-sync skew recovery + LP oracle")
def test_acceptance_01_clock_sync():
    cfg = SimConfig(duration=9.999, seed=101, clock_skew=1e-5,
                    min_delay=0.002, jitter_max=0.010)
    pairs = gen_timestamp_pairs(cfg)
    assert len(pairs) == 2000
    start = time.perf_counter()
    model = clocksync.fit_clock_batch(pairs)
    elapsed = time.perf_counter() - start
    true_skew = 1.0 + cfg.clock_skew
    assert abs(model.skew - true_skew) / true_skew < 1e-5

    # LP oracle: maximize sum(a*s + b) subject to a*s_i + b <= h_i, which
    # minimizes the summed excess sum(h - a*s - b) the hull edge minimizes.
    s = np.array([p.sensor_time for p in pairs])
    h = np.array([p.host_time for p in pairs])
    res = scipy.optimize.linprog(
        c=[-float(np.sum(s)), -float(len(s))],
        A_ub=np.column_stack([s, np.ones_like(s)]), b_ub=h,
        bounds=[(None, None), (None, None)], method="highs")
    assert res.status == 0
    lp_objective = float(np.sum(h)) + res.fun   # min of sum(h - a*s - b)
    hull_objective = len(pairs) * model.mean_excess
    assert abs(hull_objective - lp_objective) < 1e-9
    assert elapsed < 1.0


# ----------------------------------------------------------- 2: causal = batch

@criterion(2, "causal equals batch over 50 seeds")
def test_acceptance_02_causal_equals_batch():
    start = time.perf_counter()
    for seed in range(50):
        cfg = SimConfig(duration=2.0, seed=seed)
        pairs = gen_timestamp_pairs(cfg)
        batch = clocksync.fit_clock_batch(pairs)
        final = None
        for _, final in clocksync.fit_clock_causal(pairs):
            pass
        assert final == batch, f"seed {seed}"
    assert time.perf_counter() - start < 10.0


# --------------------------------------------------------- 3: offset recovery

def exhaustive_offset_oracle(imu_times, imu_norms, lidar_times, lidar_norms,
                             window=0.5, step=0.001):
    """Brute-force 1 kHz correlation argmax, independent of the library."""
    best = (-2.0, 0.0)
    for tau in np.arange(-window, window + step / 2, step):
        shifted = lidar_times + tau
        lo = max(imu_times[0], shifted[0])
        hi = min(imu_times[-1], shifted[-1])
        if hi - lo < 10.0:
            continue
        grid = np.arange(lo, hi, step)
        a = np.interp(grid, imu_times, imu_norms)
        b = np.interp(grid, shifted, lidar_norms)
        a, b = a - a.mean(), b - b.mean()
        denom = math.sqrt(float(a @ a) * float(b @ b))
        if denom == 0:
            continue
        c = float(a @ b) / denom
        if c > best[0]:
            best = (c, float(tau))
    return best[1]


@criterion(3, "time-offset recovery vs 1 kHz oracle")
def test_acceptance_03_time_offset():
    for offset_ms in (-20.0, -9.04, 0.0, 12.0, 19.6):
        cfg = SimConfig(duration=60.0, seed=17, time_offset=offset_ms * 1e-3)
        analytic = make_analytic(cfg)
        imu = gen_imu(cfg, analytic)
        odom = gen_lidar_odometry(cfg, analytic)
        imu_t = np.array([s.t for s in imu])
        imu_g = np.array([s.gyro for s in imu])
        lid_t, lid_w = tempcal.angular_rates_from_trajectory(odom)
        start = time.perf_counter()
        est = tempcal.estimate_time_offset(
            tempcal.rate_norm_series(imu_t, imu_g, 0.01),
            tempcal.rate_norm_series(lid_t, lid_w, 0.01))
        assert time.perf_counter() - start < 5.0, f"{offset_ms} ms case"
        assert abs(est.t_d - offset_ms * 1e-3) < 1e-3, f"{offset_ms} ms case"
        oracle = exhaustive_offset_oracle(
            imu_t, np.linalg.norm(imu_g, axis=1),
            lid_t, np.linalg.norm(lid_w, axis=1))
        assert abs(est.t_d - oracle) < 0.5e-3, f"{offset_ms} ms case"


# ------------------------------------------------------------ 4: repeatability

@criterion(4, "5-seed calibration repeatability")
def test_acceptance_04_repeatability():
    start = time.perf_counter()
    axis = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    injected = math.radians(20.0) * axis
    offsets, angles = [], []
    for seed in (61, 62, 63, 64, 65):
        cfg = SimConfig(duration=30.0, seed=seed, time_offset=0.012,
                        lidar_rotation=tuple(injected),
                        gyro_noise_density=0.01 / math.sqrt(200.0),
                        odom_rot_noise=0.002)
        analytic = make_analytic(cfg)
        offset, rotation = tempcal.calibrate_lidar_imu(
            gen_imu(cfg, analytic), gen_lidar_odometry(cfg, analytic))
        offsets.append(offset.t_d)
        angles.append(math.degrees(
            np.linalg.norm(so3_log(rotation.rotation))))
    assert float(np.std(offsets, ddof=1)) < 5e-3
    assert float(np.std(angles, ddof=1)) < 0.9
    assert time.perf_counter() - start < 30.0


# ------------------------------------------------------------- 5: rotation TLS

@criterion(5, "rotation TLS with 10% outliers + degeneracy")
def test_acceptance_05_rotation_tls():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    truth = so3_exp(np.radians(30.0) * np.array([0.0, 0.0, 1.0]))
    n = 500
    lid = rng.normal(scale=0.8, size=(n, 3))
    imu = lid @ truth.matrix().T
    out_idx = rng.choice(n, n // 10, replace=False)
    imu[out_idx] = rng.uniform(-4, 4, size=(len(out_idx), 3))
    est = tempcal.estimate_rotation_tls(list(zip(imu, lid)))
    assert math.degrees(est.rotation.angle_to(truth)) < 0.1
    assert est.inlier_count <= n - len(out_idx)   # every outlier truncated

    single_axis = np.outer(np.linspace(0.1, 2.0, 50), [0.0, 0.0, 1.0])
    try:
        tempcal.estimate_rotation_tls(list(zip(single_axis.copy(),
                                               single_axis)))
        raise AssertionError("degenerate excitation not rejected")
    except DegenerateMotionError:
        pass
    assert time.perf_counter() - start < 1.0


# ------------------------------------------------------- 6: Umeyama / ATE / RPE

@criterion(6, "Umeyama/ATE exact + 1% drift RPE")
def test_acceptance_06_trajectory_metrics():
    start = time.perf_counter()
    times = np.arange(0, 5, 0.1)
    poses = [Pose(float(t), so3_exp(np.array([0.2 * math.sin(t),
                                              0.1 * math.cos(t), 0.3 * t])),
                  np.array([2 * math.sin(0.3 * t), 1.5 * math.cos(0.4 * t),
                            0.2 * t])) for t in times]
    traj = Trajectory(poses)

    # Identity: zero error exactly.
    matched = trajeval.associate(traj, traj, 0.02)
    result = trajeval.ate(matched, Pose.identity())
    assert result.rmse_translation == 0.0

    # Known transform recovered to 1e-9.
    t0 = Pose(0.0, so3_exp(np.array([0.4, -0.3, 1.2])),
              np.array([3.0, -1.0, 0.5]))
    align = trajeval.umeyama_align(trajeval.associate(
        traj, traj.transformed(t0), 0.02))
    assert align.transform.rotation.angle_to(t0.rotation) < 1e-9
    assert np.linalg.norm(align.transform.translation - t0.translation) < 1e-9

    # Straight line with 1% scale drift: translation RPE 1.0% at every length.
    tline = np.arange(0, 150, 0.5)
    ref = Trajectory([Pose(float(t), Rotation.identity(),
                           np.array([t, 0.0, 0.0])) for t in tline])
    est = Trajectory([Pose(float(t), Rotation.identity(),
                           np.array([1.01 * t, 0.0, 0.0])) for t in tline])
    rpe = trajeval.rpe(est, ref, lengths=(10.0, 20.0, 50.0, 100.0))
    for length, (trans, _, count) in rpe.per_length.items():
        assert abs(trans - 1.0) <= 0.05, f"length {length}"
        assert count > 0
    assert abs(rpe.translation_percent - 1.0) <= 0.05
    assert time.perf_counter() - start < 1.0


# -------------------------------------------------------------- 7: undistortion

@criterion(7, "undistortion wall thickness in a yawing room")
def test_acceptance_07_undistortion():
    start = time.perf_counter()
    # Yaw theta(t) = sin(t) -> peak rate 1 rad/s (amplitude 1, freq 1/2pi).
    cfg = SimConfig(duration=3.0, trans_amplitude=(0.0, 0.0, 0.0),
                    rot_amplitude=(1.0, 0.0),
                    rot_freq_start=(1.0 / (2.0 * math.pi), 0.0),
                    rot_chirp_rate=(0.0, 0.0), points_per_scan=360)
    analytic = make_analytic(cfg)
    scans, truth = gen_room_scans(cfg, analytic)
    times = np.linspace(0, cfg.duration, 40 * 3 + 1)   # 40 Hz pose sampling
    traj = Trajectory([analytic(float(t))[0] for t in times])
    half = np.asarray(cfg.room_dims) / 2.0

    def wall_rms(cloud):
        faces = np.concatenate([f for _, f in truth])
        assert len(cloud) == len(faces)
        axis = faces // 2
        sign = np.where(faces % 2 == 1, 1.0, -1.0)
        resid = cloud.xyz[np.arange(len(faces)), axis] - sign * half[axis]
        return float(np.sqrt(np.mean(resid ** 2)))

    undist = mapping.aggregate_map(scans, traj, undistort=True)
    raw = mapping.aggregate_map(scans, traj, undistort=False)
    assert wall_rms(undist) < 2e-3
    assert wall_rms(raw) > 2e-2
    assert time.perf_counter() - start < 10.0


# ------------------------------------------------------------ 8: cloud-to-cloud

@criterion(8, "cloud-to-cloud distance at 1M points")
def test_acceptance_08_cloud_to_cloud(tmp_path, capsys):
    g = np.linspace(-25.0, 25.0, 1000)    # 5 cm grid spacing, 1M points
    xx, yy = np.meshgrid(g, g)
    plane = PointCloud(np.column_stack(
        [xx.ravel(), yy.ravel(), np.zeros(xx.size)]))
    assert len(plane) == 1_000_000

    start = time.perf_counter()
    same = mapping.cloud_to_cloud_distance(plane, plane)
    elapsed_same = time.perf_counter() - start
    assert same.mean == 0.0               # identical clouds: exactly zero

    shifted = PointCloud(plane.xyz + np.array([0.0, 0.0, 0.05]))
    start = time.perf_counter()
    result = mapping.cloud_to_cloud_distance(shifted, plane)
    elapsed_shift = time.perf_counter() - start
    assert abs(result.mean - 0.05) < 1e-4
    assert elapsed_same < 5.0 and elapsed_shift < 5.0

    # Flags 0.3 / 0.7 accepted and echoed through the CLI.
    small = tmp_path / "small.ply"
    io.write_point_cloud(small, PointCloud(plane.xyz[::1000]))
    assert cli_run(["c2c", str(small), str(small),
                    "--radius", "0.3", "--max-dist", "0.7"]) == 0
    out = capsys.readouterr().out
    assert "param.radius: 0.3" in out
    assert "param.max_dist: 0.7" in out


# -------------------------------------------------------------------- 9: ICP

@criterion(9, "ICP recovers a (2 cm, 1 deg) perturbation")
def test_acceptance_09_icp():
    g = np.linspace(-2.0, 2.0, 60)
    pts = []
    for axis in range(3):
        for side in (-2.0, 2.0):
            uu, vv = np.meshgrid(g, g)
            face = np.zeros((uu.size, 3))
            face[:, axis] = side
            others = [i for i in range(3) if i != axis]
            face[:, others[0]] = uu.ravel()
            face[:, others[1]] = vv.ravel()
            pts.append(face)
    room = PointCloud(np.concatenate(pts))
    perturb = Pose(0.0, so3_exp(np.radians(1.0)
                                * np.array([0.3, -0.5, 0.8])
                                / np.linalg.norm([0.3, -0.5, 0.8])),
                   np.array([0.012, -0.01, 0.012]))   # |t| = 2 cm, 1 deg
    moved = room.transformed(perturb)
    result = mapping.icp_refine(moved, room)
    assert result.converged
    recovered = result.transform
    inv = perturb.inverse()
    assert np.linalg.norm(recovered.translation - inv.translation) < 2e-3
    assert recovered.rotation.angle_to(inv.rotation) < math.radians(0.1)
    assert np.all(np.diff(result.residuals) <= 1e-12)   # non-increasing


# ------------------------------------------------------------ 10: determinism

@criterion(10, "byte-identical reports on rerun, all subcommands")
def test_acceptance_10_determinism(tmp_path):
    sim = tmp_path / "sim"
    assert cli_run(["simgen", str(sim), "--duration", "20",
                    "--seed", "11", "--scans"]) == 0
    gt = str(sim / "groundtruth.tum")
    cloud = tmp_path / "cloud.ply"
    g = np.linspace(-2, 2, 41)
    xx, yy = np.meshgrid(g, g)
    io.write_point_cloud(cloud, PointCloud(np.column_stack(
        [xx.ravel(), yy.ravel(), np.zeros(xx.size)])))
    cam = tmp_path / "cam.txt"
    cam.write_text("fx: 500\nfy: 500\ncx: 320\ncy: 240\n"
                   "width: 640\nheight: 480\nextrinsic: 0 0 0 0 0 0 1\n")
    cases = [
        ["sync", str(sim / "pairs.csv")],
        ["calib", str(sim / "imu.csv"), str(sim / "odometry.tum")],
        ["align", gt, gt],
        ["ate", gt, gt],
        ["rpe", gt, gt, "--lengths", "2,5"],
        ["undistort", str(sim / "scans"), gt, str(tmp_path / "und")],
        ["aggregate", str(sim / "scans"), gt, str(tmp_path / "map.ply")],
        ["downsample", str(cloud), str(tmp_path / "down.ply"),
         "--target-points", "100", "--seed", "3"],
        ["c2c", str(cloud), str(cloud)],
        ["icp", str(cloud), str(cloud)],
        ["project", str(cloud), str(cam), str(tmp_path / "proj.csv")],
        ["simgen", str(tmp_path / "sim2"), "--duration", "2", "--seed", "7"],
    ]
    for argv in cases:
        a, b = tmp_path / "ra.txt", tmp_path / "rb.txt"
        assert cli_run(argv + ["-o", str(a)]) == 0, argv[0]
        assert cli_run(argv + ["-o", str(b)]) == 0, argv[0]
        assert a.read_bytes() == b.read_bytes(), argv[0]
