"""Geometry and time primitives: rotations, rigid transforms, trajectories.

Quaternions are stored (w, x, y, z) internally; file I/O uses TUM order
qx qy qz qw (see lidarmm.io). All types are immutable after construction and
all operations are pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, OrderingError, RangeError

_SLERP_SMALL_ANGLE = 1e-6


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion, renormalized on construction; q and -q are equal."""

    q: np.ndarray  # (w, x, y, z)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components (w, x, y, z)")
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion norm must be finite and nonzero")
        q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=float)
        # Shepperd's method: pick the largest diagonal combination.
        tr = np.trace(m)
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = np.array([0.25 * s,
                          (m[2, 1] - m[1, 2]) / s,
                          (m[0, 2] - m[2, 0]) / s,
                          (m[1, 0] - m[0, 1]) / s])
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array([(m[2, 1] - m[1, 2]) / s,
                          0.25 * s,
                          (m[0, 1] + m[1, 0]) / s,
                          (m[0, 2] + m[2, 0]) / s])
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = np.array([(m[0, 2] - m[2, 0]) / s,
                          (m[0, 1] + m[1, 0]) / s,
                          0.25 * s,
                          (m[1, 2] + m[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = np.array([(m[1, 0] - m[0, 1]) / s,
                          (m[0, 2] + m[2, 0]) / s,
                          (m[1, 2] + m[2, 1]) / s,
                          0.25 * s])
        return cls(q)

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __mul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate vector(s) v; accepts shape (3,) or (n, 3)."""
        v = np.asarray(v, dtype=float)
        return v @ self.matrix().T

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians between two rotations.

        Computed from the relative quaternion with atan2, which stays
        accurate near zero where acos of the dot product loses ~1e-8.
        """
        r = (self.inverse() * other).q
        return 2.0 * math.atan2(float(np.linalg.norm(r[1:])), abs(float(r[0])))

    def approx_equal(self, other: "Rotation", tol: float = 1e-9) -> bool:
        return self.angle_to(other) <= tol

    def __eq__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return self.angle_to(other) <= 1e-9

    def __hash__(self):
        # Canonical sign so q and -q hash alike.
        q = self.q if self.q[0] >= 0 else -self.q
        return hash(tuple(np.round(q, 9)))


def so3_exp(omega: np.ndarray) -> Rotation:
    """Rotation by angle |omega| about axis omega/|omega|; exp(0) = identity."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        # First-order quaternion; exact at zero.
        q = np.concatenate(([1.0], 0.5 * omega))
        return Rotation(q)
    half = 0.5 * theta
    axis = omega / theta
    return Rotation(np.concatenate(([math.cos(half)], math.sin(half) * axis)))


def so3_log(r: Rotation) -> np.ndarray:
    """Minimal axis-angle vector, |result| <= pi."""
    q = r.q if r.q[0] >= 0 else -r.q
    w = min(1.0, q[0])
    vec = q[1:]
    s = float(np.linalg.norm(vec))
    if s < 1e-12:
        return 2.0 * vec  # small-angle: q ~ (1, omega/2)
    angle = 2.0 * math.atan2(s, w)
    return (angle / s) * vec


def slerp(q0: Rotation, q1: Rotation, u: float) -> Rotation:
    """Shortest-arc spherical interpolation; nlerp below 1e-6 rad separation."""
    a = q0.q
    b = q1.q
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    dot = min(1.0, dot)
    theta = math.acos(dot)
    if theta < _SLERP_SMALL_ANGLE:
        return Rotation((1.0 - u) * a + u * b)
    s = math.sin(theta)
    return Rotation((math.sin((1.0 - u) * theta) / s) * a
                    + (math.sin(u * theta) / s) * b)


@dataclass(frozen=True)
class Pose:
    """Timestamped rigid transform: x_world = R x_body + p."""

    t: float
    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.translation, dtype=float)
        if p.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        if not np.all(np.isfinite(p)) or not math.isfinite(self.t):
            raise ValueError("pose fields must be finite")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls, t: float = 0.0) -> "Pose":
        return cls(t, Rotation.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self o other; timestamp taken from self."""
        return Pose(self.t,
                    self.rotation * other.rotation,
                    self.rotation.apply(other.translation) + self.translation)

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(self.t, rinv, -rinv.apply(self.translation))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform point(s), shape (3,) or (n, 3)."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.matrix().T + self.translation


class Trajectory:
    """Time-sorted pose sequence with interpolation.

    Stored as flat arrays (times, quaternions wxyz, translations) for fast
    vectorized access. Construction rejects non-increasing timestamps.
    """

    def __init__(self, poses):
        poses = list(poses)
        if len(poses) < 1:
            raise InsufficientDataError("trajectory needs at least one pose")
        times = np.array([p.t for p in poses])
        if np.any(np.diff(times) <= 0):
            raise OrderingError("trajectory timestamps must be strictly increasing")
        quats = np.array([p.rotation.q for p in poses])
        # Hemisphere-align consecutive quaternions so slerp stays shortest-arc.
        for i in range(1, len(quats)):
            if np.dot(quats[i - 1], quats[i]) < 0:
                quats[i] = -quats[i]
        self._times = times
        self._quats = quats
        self._trans = np.array([p.translation for p in poses])
        for a in (self._times, self._quats, self._trans):
            a.setflags(write=False)

    @classmethod
    def from_arrays(cls, times, quats_wxyz, translations) -> "Trajectory":
        poses = [Pose(float(t), Rotation(q), p)
                 for t, q, p in zip(times, quats_wxyz, translations)]
        return cls(poses)

    def __len__(self):
        return len(self._times)

    def __getitem__(self, i) -> Pose:
        return Pose(float(self._times[i]), Rotation(self._quats[i]), self._trans[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def quaternions(self) -> np.ndarray:
        """(n, 4) array in (w, x, y, z) order."""
        return self._quats

    @property
    def translations(self) -> np.ndarray:
        return self._trans

    @property
    def t_first(self) -> float:
        return float(self._times[0])

    @property
    def t_last(self) -> float:
        return float(self._times[-1])

    def interpolate(self, t: float) -> Pose:
        """Pose at time t: lerp translation, slerp rotation; no extrapolation."""
        if t < self.t_first or t > self.t_last:
            raise RangeError(
                f"time {t!r} outside trajectory range "
                f"[{self.t_first!r}, {self.t_last!r}]")
        i = int(np.searchsorted(self._times, t))
        if i < len(self._times) and self._times[i] == t:
            return self[i]
        lo, hi = i - 1, i
        u = (t - self._times[lo]) / (self._times[hi] - self._times[lo])
        rot = slerp(Rotation(self._quats[lo]), Rotation(self._quats[hi]), u)
        trans = (1.0 - u) * self._trans[lo] + u * self._trans[hi]
        return Pose(t, rot, trans)

    def transformed(self, world_tf: Pose) -> "Trajectory":
        """Apply a fixed transform on the left (new world frame)."""
        return Trajectory([Pose(p.t,
                                world_tf.rotation * p.rotation,
                                world_tf.apply(p.translation))
                           for p in self])


def interpolate_pose(traj: Trajectory, t: float) -> Pose:
    return traj.interpolate(t)
