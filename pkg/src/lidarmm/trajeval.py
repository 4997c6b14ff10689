"""Trajectory accuracy: association, Umeyama alignment, ATE, and RPE."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose, Rotation, Trajectory
from .errors import InsufficientDataError, NoOverlapError

DEFAULT_MAX_DT = 0.02          # seconds
DEFAULT_RPE_LENGTHS = (10.0, 20.0, 50.0, 100.0)   # meters
_COLLINEAR_RATIO = 1e-8


@dataclass(frozen=True)
class MatchedPoses:
    """Time-associated (estimated, reference) pose pairs, one-to-one."""

    pairs: tuple

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def est_translations(self) -> np.ndarray:
        return np.array([e.translation for e, _ in self.pairs])

    def ref_translations(self) -> np.ndarray:
        return np.array([r.translation for _, r in self.pairs])


@dataclass(frozen=True)
class AlignmentResult:
    transform: Pose
    scale: float
    residual_rms: float
    degenerate: bool    # translations collinear/coincident; rotation ill-posed


@dataclass(frozen=True)
class AteResult:
    rmse_translation: float          # meters
    rmse_rotation: float             # degrees
    per_pose_errors: np.ndarray      # (n, 2): translation m, rotation deg


@dataclass(frozen=True)
class RpeResult:
    translation_percent: float
    rotation_deg_per_m: float
    per_length: dict                 # length -> (trans %, rot deg/m, n samples)


def associate(est: Trajectory, ref: Trajectory, max_dt: float = DEFAULT_MAX_DT,
              t_offset: float = 0.0) -> MatchedPoses:
    """Greedy nearest-timestamp matching; each reference pose used once.

    t_offset is added to estimated timestamps before matching.
    """
    if max_dt <= 0:
        raise ValueError("max_dt must be positive")
    ref_times = ref.times
    used = np.zeros(len(ref), dtype=bool)
    pairs = []
    for i in range(len(est)):
        t = est.times[i] + t_offset
        j = int(np.searchsorted(ref_times, t))
        best, best_dt = None, max_dt
        for cand in (j - 1, j):
            if 0 <= cand < len(ref) and not used[cand]:
                dt = abs(ref_times[cand] - t)
                if dt <= best_dt:
                    best, best_dt = cand, dt
        if best is not None:
            used[best] = True
            pairs.append((est[i], ref[best]))
    if not pairs:
        raise NoOverlapError(
            f"no pose pairs within {max_dt} s between the two trajectories")
    return MatchedPoses(tuple(pairs))


def umeyama_align(matched: MatchedPoses, with_scale: bool = False) -> AlignmentResult:
    """Closed-form SE3 (or Sim3) minimizing sum |p_ref - T p_est|^2."""
    if len(matched) < 3:
        raise InsufficientDataError("need at least 3 matched poses to align")
    src = matched.est_translations()
    dst = matched.ref_translations()
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    x = src - mu_src
    y = dst - mu_dst
    cov = (y.T @ x) / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    r = u @ s @ vt
    var_src = float(np.mean(np.sum(x ** 2, axis=1)))
    sv = np.linalg.svd(x, compute_uv=False)
    degenerate = var_src == 0 or sv[1] < _COLLINEAR_RATIO * sv[0]
    scale = float(np.trace(np.diag(d) @ s) / var_src) if (with_scale and var_src > 0) else 1.0
    t = mu_dst - scale * (r @ mu_src)
    rot = Rotation.from_matrix(r)
    residual = dst - (scale * (src @ r.T) + t)
    rms = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    return AlignmentResult(transform=Pose(0.0, rot, t), scale=scale,
                           residual_rms=rms, degenerate=degenerate)


def ate(matched: MatchedPoses, alignment: Pose) -> AteResult:
    """Per-pose errors after applying the alignment to the estimate."""
    if len(matched) == 0:
        raise InsufficientDataError("no matched poses")
    errors = np.empty((len(matched), 2))
    for i, (e, r) in enumerate(matched):
        aligned = alignment.compose(e)
        errors[i, 0] = float(np.linalg.norm(r.translation - aligned.translation))
        errors[i, 1] = math.degrees(r.rotation.angle_to(aligned.rotation))
    return AteResult(
        rmse_translation=float(np.sqrt(np.mean(errors[:, 0] ** 2))),
        rmse_rotation=float(np.sqrt(np.mean(errors[:, 1] ** 2))),
        per_pose_errors=errors)


def _relative(a: Pose, b: Pose) -> Pose:
    return a.inverse().compose(b)


def rpe(est: Trajectory, ref: Trajectory, lengths=DEFAULT_RPE_LENGTHS,
        max_dt: float = DEFAULT_MAX_DT) -> RpeResult:
    """Relative pose error over fixed path lengths.

    Arc length is measured along the reference trajectory; for each matched
    start pose and each length L, the end pose is the matched pose whose
    reference arc distance is closest to L. Errors are trans % of L and
    rotation deg per meter; the overall numbers are means over all samples
    of all lengths.
    """
    matched = associate(est, ref, max_dt)
    ref_pts = matched.ref_translations()
    seg = np.linalg.norm(np.diff(ref_pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    per_length = {}
    all_trans, all_rot = [], []
    for length in lengths:
        t_errs, r_errs = [], []
        for i in range(len(matched)):
            target = cum[i] + length
            if target > cum[-1]:
                break
            j = int(np.searchsorted(cum, target))
            if j > 0 and target - cum[j - 1] < cum[j] - target:
                j -= 1
            if j <= i:
                continue
            est_rel = _relative(matched.pairs[i][0], matched.pairs[j][0])
            ref_rel = _relative(matched.pairs[i][1], matched.pairs[j][1])
            err = _relative(ref_rel, est_rel)
            t_errs.append(100.0 * float(np.linalg.norm(err.translation)) / length)
            r_errs.append(math.degrees(
                err.rotation.angle_to(Rotation.identity())) / length)
        if t_errs:
            per_length[length] = (float(np.mean(t_errs)), float(np.mean(r_errs)),
                                  len(t_errs))
            all_trans.extend(t_errs)
            all_rot.extend(r_errs)
    if not per_length:
        raise InsufficientDataError(
            f"reference path ({cum[-1]:.1f} m) shorter than every requested "
            f"length {tuple(lengths)}")
    return RpeResult(translation_percent=float(np.mean(all_trans)),
                     rotation_deg_per_m=float(np.mean(all_rot)),
                     per_length=per_length)
