"""Speed-based stop detection and cross-survey hotspot clustering.

Consecutive 1 Hz fixes with correlated errors share most of their error, so
differencing them to get speed removes much of it. A short median filter
removes the remaining isolated slow epochs before thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .exceptions import TooFewFixes, WindowTooLarge
from .geodesy import ProjectedPoint
from .survey import ProjectedTrack

__all__ = [
    "DEFAULT_FILTER_WINDOW_S",
    "DEFAULT_MERGE_RADIUS_M",
    "DEFAULT_MIN_DURATION_S",
    "DEFAULT_SPEED_THRESHOLD",
    "Hotspot",
    "SpeedSeries",
    "StopEvent",
    "cluster_hotspots",
    "cluster_points",
    "detect_stops",
    "median_filter",
    "sliding_median",
    "speed_series",
]

DEFAULT_SPEED_THRESHOLD = 1.0  # m/s, calibrated on simulated surveys
DEFAULT_MIN_DURATION_S = 10.0
DEFAULT_FILTER_WINDOW_S = 5
DEFAULT_MERGE_RADIUS_M = 10.0


@dataclass
class SpeedSeries:
    """Per-epoch apparent speed of one survey.

    ``raw_speed[i]`` is the speed over the interval ending at epoch ``i``;
    the first epoch copies the second.
    """

    track: ProjectedTrack
    raw_speed: np.ndarray
    filtered_speed: Optional[np.ndarray] = None
    filter_window: Optional[int] = None

    @property
    def times(self) -> np.ndarray:
        return self.track.times

    def __len__(self) -> int:
        return len(self.raw_speed)

    @property
    def speed(self) -> np.ndarray:
        """Filtered speed if available, raw speed otherwise."""
        return self.raw_speed if self.filtered_speed is None else self.filtered_speed


@dataclass(frozen=True)
class StopEvent:
    start: np.datetime64
    end: np.datetime64
    centroid: ProjectedPoint
    dispersion: float
    survey_id: str = ""
    n_fixes: int = 0

    @property
    def duration(self) -> float:
        return float((self.end - self.start).astype("timedelta64[s]").astype(np.int64))

    def as_dict(self) -> dict:
        return {
            "survey_id": self.survey_id,
            "start": str(self.start),
            "end": str(self.end),
            "duration_s": self.duration,
            "easting": self.centroid.easting,
            "northing": self.centroid.northing,
            "dispersion_m": self.dispersion,
            "n_fixes": self.n_fixes,
        }


@dataclass
class Hotspot:
    centroid: ProjectedPoint
    radius: float
    members: List[StopEvent] = field(default_factory=list)

    @property
    def total_dwell(self) -> float:
        return float(sum(e.duration for e in self.members))

    @property
    def survey_count(self) -> int:
        return len({e.survey_id for e in self.members})

    def as_dict(self) -> dict:
        return {
            "easting": self.centroid.easting,
            "northing": self.centroid.northing,
            "radius_m": self.radius,
            "total_dwell_s": self.total_dwell,
            "survey_count": self.survey_count,
            "event_count": len(self.members),
        }


def speed_series(track: ProjectedTrack) -> SpeedSeries:
    """First difference of position over time, in m/s."""
    n = len(track)
    if n < 2:
        raise TooFewFixes(f"need at least 2 fixes, got {n}")
    dt = np.diff(track.times).astype("timedelta64[s]").astype(np.int64).astype(float)
    if np.any(dt <= 0):
        raise ValueError("timestamps must be strictly increasing")
    step = np.hypot(np.diff(track.easting), np.diff(track.northing))
    speed = np.empty(n)
    speed[1:] = step / dt
    speed[0] = speed[1]
    return SpeedSeries(track, speed)


def sliding_median(values, window: int) -> np.ndarray:
    """Centred running median; the window shrinks symmetrically at the edges."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number of samples")
    if window > n:
        raise WindowTooLarge(f"window {window} longer than series ({n})")
    half = window // 2
    out = np.empty(n)
    if n >= window:
        view = np.lib.stride_tricks.sliding_window_view(x, window)
        out[half:n - half] = np.median(view, axis=1)
    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        h = min(half, i, n - 1 - i)
        out[i] = np.median(x[i - h:i + h + 1])
    return out


def median_filter(s: SpeedSeries, window: int = DEFAULT_FILTER_WINDOW_S) -> SpeedSeries:
    """Low-pass the raw speed with a ``window``-second running median (1 Hz)."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd number of seconds >= 3")
    return replace(s, filtered_speed=sliding_median(s.raw_speed, window), filter_window=window)


def _runs(mask: np.ndarray):
    """(first, last) index pairs of maximal True runs."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def detect_stops(
    s: SpeedSeries,
    speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
    min_duration: float = DEFAULT_MIN_DURATION_S,
) -> List[StopEvent]:
    """Maximal slow runs lasting at least ``min_duration`` seconds.

    A run of slow epochs ``i..j`` covers the intervals ending at those
    epochs, so the stop spans from fix ``i - 1`` (the fix where the device
    came to rest) to fix ``j``. Its duration is ``t[j] - t[i-1]`` and its
    centroid is the mean of those fixes. Thresholding uses the filtered
    speed when present.
    """
    if speed_threshold <= 0 or min_duration < 0:
        raise ValueError("speed_threshold must be positive and min_duration non-negative")
    speed = s.speed
    times = s.track.times
    pts = s.track.points
    events = []
    for i, j in _runs(speed < speed_threshold):
        first = max(i - 1, 0)
        start, end = times[first], times[j]
        duration = (end - start).astype("timedelta64[s]").astype(np.int64)
        if duration < min_duration:
            continue
        members = pts[first:j + 1]
        centroid = members.mean(axis=0)
        dispersion = float(np.sqrt(np.mean(np.sum((members - centroid) ** 2, axis=1))))
        events.append(
            StopEvent(
                start, end, ProjectedPoint(float(centroid[0]), float(centroid[1])),
                dispersion, s.track.survey_id, len(members),
            )
        )
    return events


def cluster_points(xy, weights=None, merge_radius: float = DEFAULT_MERGE_RADIUS_M):
    """Single-linkage groups of planar points cut at ``merge_radius``.

    Returns ``(labels, centers, radii)``. Labels run from 0 in order of
    first appearance; centers are ``weights``-weighted means (plain means
    for all-zero weights) and radii the largest member distance from them.
    """
    if merge_radius < 0:
        raise ValueError("merge_radius must be non-negative")
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    w = np.ones(n) if weights is None else np.clip(np.asarray(weights, dtype=float), 0.0, None)
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0)
    if n == 1:
        raw = np.array([1])
    else:
        # condensed distances: a 2 x 2 array would be misread as a square matrix
        tree = linkage(pdist(xy - xy.mean(axis=0)), method="single")
        raw = fcluster(tree, t=merge_radius, criterion="distance")
    _, first = np.unique(raw, return_index=True)
    order = raw[np.sort(first)]
    labels = np.empty(n, dtype=int)
    centers = np.empty((len(order), 2))
    radii = np.empty(len(order))
    for k, lab in enumerate(order):
        idx = raw == lab
        labels[idx] = k
        wk = w[idx]
        c = (xy[idx] * wk[:, None]).sum(axis=0) / wk.sum() if wk.sum() > 0 else xy[idx].mean(axis=0)
        centers[k] = c
        radii[k] = np.max(np.hypot(*(xy[idx] - c).T))
    return labels, centers, radii


def cluster_hotspots(
    events: Sequence[StopEvent], merge_radius: float = DEFAULT_MERGE_RADIUS_M
) -> List[Hotspot]:
    """Single-linkage clustering of stop centroids with a distance cutoff.

    Two events share a hotspot when a chain of centroids, each within
    ``merge_radius`` of the next, connects them. A hotspot's centroid is the
    dwell-weighted mean of its members and its radius the largest member
    distance from that centroid. Hotspots are ordered by their earliest
    member in input order.
    """
    events = list(events)
    if merge_radius < 0:
        raise ValueError("merge_radius must be non-negative")
    if not events:
        return []
    xy = np.array([[e.centroid.easting, e.centroid.northing] for e in events])
    labels, centers, radii = cluster_points(xy, [e.duration for e in events], merge_radius)
    return [
        Hotspot(
            ProjectedPoint(float(c[0]), float(c[1])), float(r),
            [e for e, lab in zip(events, labels) if lab == k],
        )
        for k, (c, r) in enumerate(zip(centers, radii))
    ]
