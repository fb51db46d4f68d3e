"""Survey containers: parsed fixes plus metadata, and their projected form."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import EmptySeries
from .geodesy import ProjectionParams, geodetic_to_projected, get_projection
from .nmea import GnssFix

__all__ = ["ProjectedTrack", "Survey", "project_fixes", "to_datetime64"]


def to_datetime64(timestamps) -> np.ndarray:
    out = []
    for t in timestamps:
        if isinstance(t, dt.datetime) and t.tzinfo is not None:
            t = t.astimezone(dt.timezone.utc).replace(tzinfo=None)
        out.append(np.datetime64(t, "s"))
    return np.array(out, dtype="datetime64[s]")


@dataclass
class Survey:
    fixes: list
    device_model: str = ""
    start_time: Optional[dt.datetime] = None
    user_handle: str = ""
    capture_mode: str = ""
    survey_id: str = ""


@dataclass
class ProjectedTrack:
    """Time-indexed planar positions of the usable fixes of one survey.

    ``gap_before[i]`` is True when epoch ``i`` follows the previous usable
    epoch by more than one second (skipped no-fix epochs or dropouts).
    """

    times: np.ndarray
    easting: np.ndarray
    northing: np.ndarray
    gap_before: np.ndarray = None
    survey_id: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype="datetime64[s]")
        self.easting = np.asarray(self.easting, dtype=float)
        self.northing = np.asarray(self.northing, dtype=float)
        if not (len(self.times) == len(self.easting) == len(self.northing)):
            raise ValueError("times, easting and northing must have equal length")
        if self.gap_before is None:
            steps = np.diff(self.times).astype(np.int64)
            self.gap_before = np.concatenate([[False], steps > 1])

    def __len__(self) -> int:
        return len(self.times)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.easting, self.northing])

    @property
    def seconds(self) -> np.ndarray:
        """Seconds elapsed since the first epoch."""
        if len(self.times) == 0:
            return np.zeros(0)
        return (self.times - self.times[0]).astype(np.int64).astype(float)

    def select(self, mask) -> "ProjectedTrack":
        mask = np.asarray(mask)
        return ProjectedTrack(
            self.times[mask], self.easting[mask], self.northing[mask],
            survey_id=self.survey_id,
        )

    def between(self, start, end) -> "ProjectedTrack":
        start = np.datetime64(start, "s") if not isinstance(start, np.datetime64) else start
        end = np.datetime64(end, "s") if not isinstance(end, np.datetime64) else end
        return self.select((self.times >= start) & (self.times <= end))


def project_fixes(
    fixes: Sequence[GnssFix],
    params: Optional[ProjectionParams] = None,
    survey_id: str = "",
) -> ProjectedTrack:
    """Drop no-fix epochs and project the rest onto the plane."""
    usable = [f for f in fixes if not f.excluded]
    if not usable:
        raise EmptySeries("no usable fixes to project")
    params = params or get_projection()
    lat = np.array([f.latitude for f in usable])
    lon = np.array([f.longitude for f in usable])
    easting, northing = geodetic_to_projected(lat, lon, params)
    return ProjectedTrack(
        to_datetime64(f.timestamp for f in usable),
        np.atleast_1d(easting),
        np.atleast_1d(northing),
        survey_id=survey_id,
    )
