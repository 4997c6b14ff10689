"""Linear sensor-to-host clock mapping from jittered arrival times.

Arrival (host) timestamps are the true event times plus a nonnegative
transmission delay, so the points (sensor_time, host_time) all lie on or
above the true clock line. Fitting an edge of the lower convex hull of the
points recovers the line; adding the mean excess back gives smoothed,
jitter-free host timestamps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, OrderingError

SKEW_SANITY = 1e-3  # |a - 1| beyond this is flagged, not rejected


@dataclass(frozen=True)
class TimestampPair:
    sensor_time: float
    host_time: float


@dataclass(frozen=True)
class ClockModel:
    """host ~ skew * sensor + offset, a lower bound on arrival times."""

    skew: float
    offset: float
    support_count: int
    mean_excess: float

    def predict(self, sensor_time):
        return self.skew * np.asarray(sensor_time) + self.offset

    @property
    def skew_suspicious(self) -> bool:
        return abs(self.skew - 1.0) >= SKEW_SANITY


def _as_arrays(pairs):
    s = np.array([p.sensor_time for p in pairs])
    h = np.array([p.host_time for p in pairs])
    if np.any(np.diff(s) <= 0):
        raise OrderingError("sensor times must be strictly increasing")
    return s, h


def _lower_hull(s, h):
    """Indices of the lower convex hull, monotone chain (s already sorted)."""
    hull = []
    for i in range(len(s)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # Keep k only while the chain turns counter-clockwise (stays convex
            # from below); pop on straight or clockwise turns.
            cross = (s[k] - s[j]) * (h[i] - h[j]) - (h[k] - h[j]) * (s[i] - s[j])
            if cross > 0:
                break
            hull.pop()
        hull.append(i)
    return hull


def _best_edge(hull, s, h, sum_s=None, sum_h=None):
    """Hull edge minimizing total vertical deviation sum(h - a*s - b).

    Ties broken by larger support count, then skew closest to 1. Support is
    only counted for the minimum-objective edges, so the common no-tie case
    costs one O(n) scan.
    """
    n = len(s)
    if sum_s is None:
        sum_s = float(np.sum(s))
    if sum_h is None:
        sum_h = float(np.sum(h))
    j = np.asarray(hull[:-1])
    k = np.asarray(hull[1:])
    a = (h[k] - h[j]) / (s[k] - s[j])
    b = h[j] - a * s[j]
    objective = sum_h - a * sum_s - n * b
    best_obj = float(np.min(objective))
    best = None
    for e in np.flatnonzero(objective == best_obj):
        support = int(np.sum(np.abs(h - (a[e] * s + b[e])) <= 1e-9))
        key = (-support, abs(a[e] - 1.0))
        if best is None or key < best[0]:
            best = (key, float(a[e]), float(b[e]), support)
    _, ae, be, support = best
    return ClockModel(skew=ae, offset=be, support_count=support,
                      mean_excess=best_obj / n)


def fit_clock_batch(pairs) -> ClockModel:
    """Fit the lower-hull edge minimizing total excess over all pairs."""
    if len(pairs) < 2:
        raise InsufficientDataError("need at least 2 timestamp pairs")
    s, h = _as_arrays(pairs)
    hull = _lower_hull(s, h)
    if len(hull) == 1:  # cannot happen with >= 2 distinct sensor times
        raise InsufficientDataError("degenerate hull")
    return _best_edge(hull, s, h)


class CausalClockFitter:
    """Incremental lower-hull fitter; single-writer, never revises the past."""

    def __init__(self, warmup: int = 2):
        if warmup < 2:
            raise ValueError("warmup must be >= 2")
        self.warmup = warmup
        self._s = np.empty(1024)
        self._h = np.empty(1024)
        self._n = 0
        self._hull = []  # indices into _s/_h

    def update(self, pair: TimestampPair) -> ClockModel:
        s, h = pair.sensor_time, pair.host_time
        if self._n and s <= self._s[self._n - 1]:
            raise OrderingError("sensor times must be strictly increasing")
        if self._n == len(self._s):
            self._s = np.concatenate([self._s, np.empty(self._n)])
            self._h = np.concatenate([self._h, np.empty(self._n)])
        i = self._n
        self._s[i] = s
        self._h[i] = h
        self._n += 1
        while len(self._hull) >= 2:
            j, k = self._hull[-2], self._hull[-1]
            cross = ((self._s[k] - self._s[j]) * (h - self._h[j])
                     - (self._h[k] - self._h[j]) * (s - self._s[j]))
            if cross > 0:
                break
            self._hull.pop()
        self._hull.append(i)
        if self._n <= self.warmup:
            # Identity-skew line through the first pair.
            return ClockModel(skew=1.0, offset=float(self._h[0] - self._s[0]),
                              support_count=1, mean_excess=0.0)
        # Sums recomputed vectorized so causal and batch agree bit-for-bit.
        return _best_edge(self._hull, self._s[:self._n], self._h[:self._n])


def fit_clock_causal(pairs, warmup: int = 2):
    """Yield (pair, model-so-far) for each pair in arrival order."""
    fitter = CausalClockFitter(warmup)
    for pair in pairs:
        yield pair, fitter.update(pair)


def smooth_timestamps(pairs, model: ClockModel) -> np.ndarray:
    """Jitter-free host timestamps: skew * sensor + offset + mean_excess."""
    s = np.array([p.sensor_time for p in pairs])
    return model.skew * s + model.offset + model.mean_excess
