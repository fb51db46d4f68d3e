"""Static-window precision and temporal autocorrelation of residuals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .exceptions import (
    DegenerateSeries,
    InsufficientData,
    IrregularSampling,
    SeriesTooShort,
    SurveyTooShort,
)
from .geodesy import ProjectedPoint
from .survey import ProjectedTrack
from .track import ResidualSeries

__all__ = [
    "AcfSeries",
    "PrecisionReport",
    "StaticWindow",
    "acf",
    "coordinate_acf",
    "extract_static_windows",
    "regularize",
    "residual_acf",
    "static_precision",
]

DEFAULT_WINDOW_S = 180
DEFAULT_PRECISION_EPOCHS = 100
DEFAULT_MAX_LAG_S = 120
MAX_GAP_FRACTION = 0.05
Z_95 = 1.96

WINDOW_LABELS = ("survey_start", "survey_end", "custom")


@dataclass
class StaticWindow:
    start: np.datetime64
    end: np.datetime64
    track: ProjectedTrack
    label: str = "custom"

    def __post_init__(self):
        if self.label not in WINDOW_LABELS:
            raise ValueError(f"label must be one of {WINDOW_LABELS}")
        if not self.end > self.start:
            raise ValueError("window must have positive duration")

    @property
    def duration(self) -> float:
        return float((self.end - self.start).astype(np.int64))

    def __len__(self) -> int:
        return len(self.track)


@dataclass(frozen=True)
class PrecisionReport:
    sigma_east: float
    sigma_north: float
    n: int
    mean: ProjectedPoint
    label: str

    def as_dict(self) -> dict:
        return {
            "window": self.label,
            "n": self.n,
            "sigma_east_m": self.sigma_east,
            "sigma_north_m": self.sigma_north,
            "mean_east_m": self.mean.easting,
            "mean_north_m": self.mean.northing,
        }


@dataclass
class AcfSeries:
    component: str
    lags: np.ndarray
    values: np.ndarray
    n: int

    @property
    def significance_bound(self) -> float:
        return Z_95 / np.sqrt(self.n)

    def significant(self) -> np.ndarray:
        """Mask of lags whose correlation lies outside the white-noise band."""
        return np.abs(self.values) > self.significance_bound

    def at(self, lag: int) -> float:
        return float(self.values[int(lag)])


def extract_static_windows(
    track: ProjectedTrack,
    duration: float = DEFAULT_WINDOW_S,
    placement: str = "both",
) -> List[StaticWindow]:
    """Cut the first and/or last ``duration`` seconds of a survey.

    The start window covers ``[t0, t0 + duration)``, the end window
    ``(t1 - duration, t1]``.
    """
    if placement not in ("start", "end", "both"):
        raise ValueError("placement must be 'start', 'end' or 'both'")
    if duration <= 0:
        raise ValueError("duration must be positive")
    if len(track) < 2:
        raise SurveyTooShort("survey has fewer than two fixes")
    t0, t1 = track.times[0], track.times[-1]
    span = float((t1 - t0).astype(np.int64))
    needed = 2 * duration if placement == "both" else duration
    if span <= needed:
        raise SurveyTooShort(f"survey lasts {span:.0f} s, need more than {needed:.0f} s")
    d = np.timedelta64(int(round(duration)), "s")
    windows = []
    if placement in ("start", "both"):
        mask = track.times < t0 + d
        windows.append(StaticWindow(t0, t0 + d, track.select(mask), "survey_start"))
    if placement in ("end", "both"):
        mask = track.times > t1 - d
        windows.append(StaticWindow(t1 - d, t1, track.select(mask), "survey_end"))
    return windows


def static_precision(
    window: StaticWindow, max_epochs: Optional[int] = DEFAULT_PRECISION_EPOCHS
) -> PrecisionReport:
    """Per-axis sample standard deviation (n - 1) of a static window.

    By default only the first 100 epochs are used; ``max_epochs=None``
    uses the whole window.
    """
    pts = window.track.points
    if max_epochs is not None:
        pts = pts[:max_epochs]
    n = len(pts)
    if n < 2:
        raise InsufficientData(f"need at least 2 fixes, got {n}")
    # centre on the first fix so identical positions give exactly zero
    ref = pts[0]
    d = pts - ref
    mean = ref + d.mean(axis=0)
    sigma = d.std(axis=0, ddof=1)
    return PrecisionReport(
        float(sigma[0]), float(sigma[1]), n,
        ProjectedPoint(float(mean[0]), float(mean[1])), window.label,
    )


def regularize(values, seconds=None, max_gap_fraction: float = MAX_GAP_FRACTION):
    """Place a time series on a regular 1 s grid.

    Missing epochs are filled by linear interpolation as long as they make
    up at most ``max_gap_fraction`` of the grid.
    """
    x = np.asarray(values, dtype=float)
    if seconds is None:
        return x
    t = np.asarray(seconds)
    if np.issubdtype(t.dtype, np.datetime64):
        t = (t - t[0]).astype("timedelta64[s]").astype(np.int64)
    t = np.asarray(t, dtype=float)
    if len(t) != len(x):
        raise ValueError("values and seconds must have equal length")
    if len(t) == 0:
        return x
    steps = np.diff(t)
    if np.any(steps <= 0) or np.any(np.abs(t - np.round(t)) > 1e-6):
        raise IrregularSampling("timestamps must be strictly increasing whole seconds")
    grid = np.arange(t[0], t[-1] + 1.0)
    missing = len(grid) - len(t)
    if missing == 0:
        return x
    if missing / len(grid) > max_gap_fraction:
        raise IrregularSampling(
            f"{missing} of {len(grid)} epochs missing (> {max_gap_fraction:.0%})"
        )
    return np.interp(grid, t, x)


def acf(values, max_lag: int = DEFAULT_MAX_LAG_S, seconds=None,
        component: str = "value") -> AcfSeries:
    """Biased sample autocorrelation up to ``max_lag`` seconds.

    ``r(k) = sum((x_t - m)(x_{t+k} - m)) / sum((x_t - m)^2)``; the 1/n
    normalisation keeps every ``|r(k)| <= 1``.
    """
    x = regularize(values, seconds)
    n = len(x)
    max_lag = int(max_lag)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if n <= 3 * max_lag or n < 2:
        raise SeriesTooShort(f"series of {n} samples too short for max lag {max_lag}")
    z = x - x.mean()
    denom = float(np.dot(z, z))
    if denom <= 1e-300 or np.allclose(z, 0.0, atol=1e-12 * max(1.0, np.abs(x).max())):
        raise DegenerateSeries("series has zero variance")
    r = np.empty(max_lag + 1)
    r[0] = 1.0
    for k in range(1, max_lag + 1):
        r[k] = np.dot(z[:-k], z[k:]) / denom
    return AcfSeries(component, np.arange(max_lag + 1), r, n)


def residual_acf(rs: ResidualSeries, max_lag: int = DEFAULT_MAX_LAG_S) -> tuple:
    """ACF of the east and north residual components."""
    secs = rs.seconds
    return (
        acf(rs.east, max_lag, secs, component="east"),
        acf(rs.north, max_lag, secs, component="north"),
    )


def coordinate_acf(track: ProjectedTrack, max_lag: int = DEFAULT_MAX_LAG_S) -> tuple:
    """ACF of the raw easting and northing series (no reference track)."""
    secs = track.seconds
    return (
        acf(track.easting, max_lag, secs, component="east"),
        acf(track.northing, max_lag, secs, component="north"),
    )
