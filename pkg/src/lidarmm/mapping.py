"""Map construction and accuracy: undistortion, aggregation, downsampling,
cloud-to-cloud distance with local plane modeling, point-to-plane ICP, and
lidar-to-image projection.

Undistortion anchors every point to the scan-start pose: points captured at
scan_start + dt are moved into the sensor frame at scan_start.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import Pose, Trajectory, so3_exp
from .errors import (DataError, InsufficientDataError, NoOverlapError,
                     RangeError)

MIN_RANGE = 0.05          # meters; closer returns are self-hits
MAX_POINT_DT = 0.2        # seconds; 2x the 10 Hz scan period
DEFAULT_C2C_RADIUS = 0.3  # meters
DEFAULT_C2C_MAX_DIST = 0.7


@dataclass(frozen=True)
class LidarScan:
    """One sweep: sensor-frame points with per-point capture-time offsets."""

    scan_start: float
    points: np.ndarray            # (n, 3) meters
    intensity: np.ndarray         # (n,)
    dt: np.ndarray                # (n,) seconds from scan_start

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=float).ravel()
        dt = np.asarray(self.dt, dtype=float).ravel()
        if not (len(pts) == len(inten) == len(dt)):
            raise DataError("points, intensity, and dt lengths differ")
        if not np.all(np.isfinite(pts)):
            raise DataError("scan contains non-finite coordinates")
        if np.any(dt < 0) or np.any(dt >= MAX_POINT_DT):
            raise DataError(f"per-point dt must lie in [0, {MAX_POINT_DT})")
        keep = np.linalg.norm(pts, axis=1) > MIN_RANGE
        pts, inten, dt = pts[keep], inten[keep], dt[keep]
        for a in (pts, inten, dt):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "dt", dt)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class PointCloud:
    xyz: np.ndarray                       # (n, 3)
    intensity: np.ndarray | None = None   # (n,)
    color: np.ndarray | None = None       # (n, 3) uint8

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise DataError("point cloud contains non-finite coordinates")
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)

    def __len__(self):
        return len(self.xyz)

    def take(self, idx) -> "PointCloud":
        return PointCloud(
            self.xyz[idx],
            None if self.intensity is None else self.intensity[idx],
            None if self.color is None else self.color[idx])

    def transformed(self, tf: Pose) -> "PointCloud":
        return PointCloud(tf.apply(self.xyz), self.intensity, self.color)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    t_camera_lidar: Pose

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DataError("principal point must lie inside the image")


def undistort_scan(scan: LidarScan, traj: Trajectory) -> LidarScan:
    """Move every point into the scan-start sensor pose.

    p' = T(scan_start)^-1 T(scan_start + dt) p. Per-point dt values are kept
    for traceability even though all points now share the scan_start pose.
    """
    t0 = scan.scan_start
    t_end = t0 + (float(scan.dt.max()) if len(scan) else 0.0)
    if t0 < traj.t_first or t_end > traj.t_last:
        raise RangeError(
            f"scan at {t0:.9f} (ends {t_end:.9f}) outside trajectory range "
            f"[{traj.t_first:.9f}, {traj.t_last:.9f}]")
    anchor_inv = traj.interpolate(t0).inverse()
    out = np.empty_like(scan.points)
    # Points sharing a dt value share one interpolated pose.
    unique_dt, inverse = np.unique(scan.dt, return_inverse=True)
    for k, dt in enumerate(unique_dt):
        sel = inverse == k
        rel = anchor_inv.compose(traj.interpolate(t0 + float(dt)))
        out[sel] = rel.apply(scan.points[sel])
    return LidarScan(scan_start=t0, points=out,
                     intensity=scan.intensity, dt=scan.dt)


def aggregate_map(scans, traj: Trajectory, undistort: bool = True) -> PointCloud:
    """World-frame map: each scan posed by interpolation at its scan_start."""
    parts = []
    intens = []
    for scan in scans:
        s = undistort_scan(scan, traj) if undistort else scan
        pose = traj.interpolate(s.scan_start)
        parts.append(pose.apply(s.points))
        intens.append(s.intensity)
    if not parts:
        raise InsufficientDataError("no scans to aggregate")
    return PointCloud(np.vstack(parts), intensity=np.concatenate(intens))


def random_downsample(cloud: PointCloud, target_points: int,
                      seed: int = 0) -> PointCloud:
    """Uniform sample without replacement; deterministic for a fixed seed."""
    if target_points < 1:
        raise ValueError("target_points must be >= 1")
    n = len(cloud)
    if target_points >= n:
        return cloud
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=target_points, replace=False)
    return cloud.take(np.sort(idx))


@dataclass(frozen=True)
class CloudDistanceResult:
    distances: np.ndarray     # per compared point; NaN where excluded
    mean: float               # over included points
    excluded_count: int


_KNN_BATCH = 8  # neighbors used per local plane fit


def _smallest_eigvec_sym3(cov: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the smallest eigenvalue for a (n, 3, 3) symmetric
    batch, via the trigonometric eigenvalue formula and the adjugate null
    vector. Rows where the direction is undefined (isotropic or rank-1
    input) come back as zero vectors.
    """
    a00, a11, a22 = cov[:, 0, 0], cov[:, 1, 1], cov[:, 2, 2]
    a01, a02, a12 = cov[:, 0, 1], cov[:, 0, 2], cov[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    p2 = ((a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2
          + 2.0 * (a01 ** 2 + a02 ** 2 + a12 ** 2))
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    safe_p = np.where(p > 0, p, 1.0)
    b00, b11, b22 = (a00 - q) / safe_p, (a11 - q) / safe_p, (a22 - q) / safe_p
    b01, b02, b12 = a01 / safe_p, a02 / safe_p, a12 / safe_p
    detb = (b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02))
    r = np.clip(detb / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    # Null vector of A = cov - lam_min I from its largest adjugate column.
    m = cov.copy()
    m[:, 0, 0] -= lam_min
    m[:, 1, 1] -= lam_min
    m[:, 2, 2] -= lam_min
    c0 = np.cross(m[:, :, 0], m[:, :, 1])
    c1 = np.cross(m[:, :, 1], m[:, :, 2])
    c2 = np.cross(m[:, :, 0], m[:, :, 2])
    cand = np.stack([c0, c1, c2], axis=1)
    norms = np.linalg.norm(cand, axis=2)
    best = np.argmax(norms, axis=1)
    vec = cand[np.arange(len(cand)), best]
    n = norms[np.arange(len(cand)), best]
    scale = np.sqrt(np.maximum(p2, 1.0e-300))
    ok = n > 1e-12 * scale * scale
    out = np.zeros_like(vec)
    out[ok] = vec[ok] / n[ok, None]
    return out


def _plane_distances_knn(tree, ref_xyz, ref32, pts, radius, k):
    """Plane distances and nearest-neighbor distances for a point batch.

    One k-NN query per point: column 0 is the exact nearest reference
    neighbor (the anchor); the remaining columns supply up to _KNN_BATCH fit
    neighbors, of which only those within `radius` of the anchor enter the
    local least-squares plane. Fewer than 3 neighbors falls back to the
    nearest-neighbor distance; the plane distance is capped by the
    nearest-neighbor distance.
    """
    m = len(pts)
    dd, ii = tree.query(pts, k=k, workers=-1)
    if k == 1:
        dd, ii = dd[:, None], ii[:, None]
    nn_dist = dd[:, 0]
    anchor_idx = ii[:, 0]
    # Anchor-relative float32 workspace: coordinates are bounded by the
    # search radius, so single precision costs ~1e-6 m here.
    neigh = ref32[ii] - ref32[anchor_idx][:, None, :]
    valid = np.sum(neigh * neigh, axis=2) <= np.float32(radius) ** 2
    counts = valid.sum(axis=1)
    vals = np.empty(m)
    sparse = counts < 3
    vals[sparse] = nn_dist[sparse]
    fit = ~sparse
    if np.any(fit):
        neigh = neigh[fit] * valid[fit][:, :, None]
        cnt = counts[fit][:, None].astype(np.float32)
        centroid = neigh.sum(axis=1) / cnt
        cov = np.empty((len(neigh), 3, 3), dtype=np.float32)
        for a in range(3):
            for b in range(a, 3):
                cov[:, a, b] = cov[:, b, a] = (
                    (neigh[:, :, a] * neigh[:, :, b]).sum(axis=1) / cnt[:, 0]
                    - centroid[:, a] * centroid[:, b])
        normal = _smallest_eigvec_sym3(cov.astype(np.float64))
        defined = np.linalg.norm(normal, axis=1) > 0.5
        rel = (pts[fit] - ref_xyz[anchor_idx[fit]]) - centroid
        plane = np.abs(np.sum(rel * normal, axis=1))
        plane[~defined] = np.inf     # degenerate neighborhood: use nn distance
        vals[fit] = np.minimum(plane, nn_dist[fit])
    return vals, nn_dist


def cloud_to_cloud_distance(compared: PointCloud, reference: PointCloud,
                            radius: float = DEFAULT_C2C_RADIUS,
                            max_dist: float = DEFAULT_C2C_MAX_DIST
                            ) -> CloudDistanceResult:
    """Per-point distance to a locally fitted reference plane.

    For each compared point: gather the nearest reference neighbors within
    `radius` of its nearest reference point; with >= 3 neighbors the
    distance is the absolute point-to-plane distance to their least-squares
    plane, capped by the nearest-neighbor distance (the plane is a local
    model, never worse than the raw neighbor); with fewer neighbors it is
    the nearest-neighbor distance. Points whose nearest neighbor is farther
    than `max_dist` are excluded from the mean. Not symmetric in its
    arguments.
    """
    if radius <= 0 or max_dist <= 0:
        raise ValueError("radius and max_dist must be positive")
    if len(reference) == 0:
        raise InsufficientDataError("reference cloud is empty")
    tree = cKDTree(reference.xyz, leafsize=16, balanced_tree=False)
    ref32 = reference.xyz.astype(np.float32)
    k = min(1 + _KNN_BATCH, len(reference))
    n = len(compared)
    vals = np.empty(n)
    nn_dist = np.empty(n)
    # Chunked to bound the (chunk, k, 3) neighbor workspace.
    for lo in range(0, n, 200_000):
        sel = slice(lo, min(lo + 200_000, n))
        vals[sel], nn_dist[sel] = _plane_distances_knn(
            tree, reference.xyz, ref32, compared.xyz[sel], radius, k)
    included = nn_dist <= max_dist
    if not np.any(included):
        raise NoOverlapError(
            f"every compared point is farther than {max_dist} m from the "
            f"reference cloud")
    distances = np.where(included, vals, np.nan)
    return CloudDistanceResult(distances=distances,
                               mean=float(np.mean(vals[included])),
                               excluded_count=int(np.sum(~included)))


@dataclass(frozen=True)
class IcpResult:
    transform: Pose
    converged: bool
    iterations: int
    residuals: tuple              # mean |point-to-plane| per accepted iteration
    unconstrained_directions: int # near-null directions of the final system


def _estimate_normals(xyz: np.ndarray, k: int = 10) -> np.ndarray:
    tree = cKDTree(xyz)
    k = min(k, len(xyz))
    _, idx = tree.query(xyz, k=k, workers=-1)
    neigh = xyz[idx]                       # (n, k, 3)
    mu = neigh.mean(axis=1, keepdims=True)
    d = neigh - mu
    cov = np.einsum("nki,nkj->nij", d, d) / k
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def icp_refine(compared: PointCloud, reference: PointCloud,
               max_iterations: int = 50, tolerance: float = 1e-6,
               max_corr_dist: float = 1.0) -> IcpResult:
    """Point-to-plane ICP refining the pose of `compared` onto `reference`.

    Linearizes around the current estimate each iteration (small-angle
    rotation update applied via the exponential map). Stops when the update
    norm falls below `tolerance`; non-convergence is flagged, last iterate
    returned.
    """
    tree = cKDTree(reference.xyz)
    normals = _estimate_normals(reference.xyz)
    nn0, _ = tree.query(compared.xyz, workers=-1)
    overlap = float(np.mean(nn0 <= max_corr_dist))
    if overlap < 0.2:
        raise NoOverlapError(
            f"only {overlap:.0%} of compared points within {max_corr_dist} m "
            f"of the reference; need >= 20%")
    current = Pose.identity()
    residual_hist = []
    converged = False
    iterations = 0
    unconstrained = 0
    prev_pose = current
    for iterations in range(1, max_iterations + 1):
        moved = current.apply(compared.xyz)
        dist, idx = tree.query(moved, workers=-1)
        keep = dist <= max_corr_dist
        p = moved[keep]
        q = reference.xyz[idx[keep]]
        n = normals[idx[keep]]
        r = np.sum((p - q) * n, axis=1)
        res = float(np.mean(np.abs(r)))
        if residual_hist and res > residual_hist[-1]:
            # Reject the step that raised the residual; keep the last good pose.
            current = prev_pose
            break
        residual_hist.append(res)
        a = np.hstack([np.cross(p, n), n])          # (m, 6)
        ata = a.T @ a
        atb = a.T @ (-r)
        sv = np.linalg.svd(ata, compute_uv=False)
        unconstrained = int(np.sum(sv < 1e-9 * sv[0]))
        x, *_ = np.linalg.lstsq(ata, atb, rcond=None)
        prev_pose = current
        update = Pose(0.0, so3_exp(x[:3]), x[3:])
        current = update.compose(current)
        if float(np.linalg.norm(x)) < tolerance:
            converged = True
            break
    return IcpResult(transform=Pose(0.0, current.rotation, current.translation),
                     converged=converged, iterations=iterations,
                     residuals=tuple(residual_hist),
                     unconstrained_directions=unconstrained)


def project_to_image(cloud: PointCloud, cam: CameraModel) -> np.ndarray:
    """Pinhole projection of lidar points; returns (m, 3) rows (u, v, depth).

    Points behind the camera or outside the image bounds are dropped.
    """
    p_cam = cam.t_camera_lidar.apply(cloud.xyz)
    z = p_cam[:, 2]
    front = z > 0
    p_cam = p_cam[front]
    z = z[front]
    u = cam.fx * p_cam[:, 0] / z + cam.cx
    v = cam.fy * p_cam[:, 1] / z + cam.cy
    inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return np.column_stack([u[inside], v[inside], z[inside]])
