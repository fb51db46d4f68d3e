"""Reference polyline, closest-point projection and accuracy statistics.

Each fix is compared with the nearest point of a surveyed reference track;
the vector from that foot point to the fix is the residual. Only the error
component perpendicular to the nearest segment is visible this way, which is
why a closed loop sampling all directions is used as reference.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .exceptions import (
    EmptySeries,
    InsufficientData,
    MalformedGeometry,
    TooFewVertices,
)
from .geodesy import ProjectedPoint, ProjectionParams, geodetic_to_projected, get_projection
from .survey import ProjectedTrack

__all__ = [
    "CONFIDENCE_LEVELS",
    "AccuracyStats",
    "ConfidenceEllipse",
    "ReferencePolyline",
    "ResidualSeries",
    "SegmentLine",
    "TrackProjection",
    "accuracy_stats",
    "closest_point_on_polyline",
    "confidence_scale",
    "load_polyline",
    "project_onto_polyline",
    "residual_series",
]

CONFIDENCE_LEVELS = (0.68, 0.95, 0.99)
CLOSURE_TOLERANCE_M = 0.01
# total-station survey error of the reference track
DEFAULT_SURVEY_ERROR_BOUND_M = 0.19
_CHUNK_CELLS = 2_000_000


class ReferencePolyline:
    """Planar polyline used as ground truth.

    Parameters
    ----------
    vertices : array-like of shape (n, 2)
        Easting/northing pairs. For a closed polyline the first vertex must
        not be repeated at the end; the closing segment is implicit.
    closed : bool
    survey_error_bound : float
        Known measurement error of the reference itself, in metres.
    """

    def __init__(self, vertices, closed: bool = False,
                 survey_error_bound: float = DEFAULT_SURVEY_ERROR_BOUND_M):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MalformedGeometry("vertices must have shape (n, 2)")
        if not np.all(np.isfinite(v)):
            raise MalformedGeometry("vertices must be finite")
        minimum = 3 if closed else 2
        if len(v) < minimum:
            raise TooFewVertices(
                f"{'closed' if closed else 'open'} polyline needs >= {minimum} vertices"
            )
        self.vertices = v
        self.closed = bool(closed)
        self.survey_error_bound = float(survey_error_bound)

        ends = np.roll(v, -1, axis=0) if closed else v[1:]
        self.seg_start = v if closed else v[:-1]
        self.seg_vector = ends - self.seg_start
        self.seg_length = np.hypot(self.seg_vector[:, 0], self.seg_vector[:, 1])
        if np.any(self.seg_length <= 0):
            bad = int(np.argmin(self.seg_length))
            raise MalformedGeometry(f"repeated vertex at segment {bad}")
        self.cumulative_length = np.concatenate([[0.0], np.cumsum(self.seg_length)])[: len(v)]
        self.length = float(np.sum(self.seg_length))
        self.vertices.setflags(write=False)

    @property
    def n_segments(self) -> int:
        return len(self.seg_length)

    def segment(self, index: int) -> "SegmentLine":
        p = self.seg_start[index]
        return SegmentLine.through(p, p + self.seg_vector[index])

    def point_at(self, along) -> np.ndarray:
        """Planar point(s) at along-track distance ``along`` (wraps when closed)."""
        along = np.asarray(along, dtype=float)
        if self.closed:
            along = np.mod(along, self.length)
        else:
            along = np.clip(along, 0.0, self.length)
        starts = np.concatenate([[0.0], np.cumsum(self.seg_length)[:-1]])
        idx = np.clip(np.searchsorted(starts, along, side="right") - 1, 0, self.n_segments - 1)
        t = (along - starts[idx]) / self.seg_length[idx]
        return self.seg_start[idx] + t[..., None] * self.seg_vector[idx]

    def __repr__(self):
        kind = "closed" if self.closed else "open"
        return f"ReferencePolyline({len(self.vertices)} vertices, {kind}, {self.length:.1f} m)"


@dataclass(frozen=True)
class SegmentLine:
    """Implicit line ``a*x + b*y + c = 0`` through a segment's endpoints."""

    a: float
    b: float
    c: float
    start: ProjectedPoint
    end: ProjectedPoint

    @classmethod
    def through(cls, p, q) -> "SegmentLine":
        x1, y1 = float(p[0]), float(p[1])
        x2, y2 = float(q[0]), float(q[1])
        a, b = y2 - y1, x1 - x2
        if a == 0 and b == 0:
            raise MalformedGeometry("segment endpoints coincide")
        return cls(a, b, x2 * y1 - x1 * y2, ProjectedPoint(x1, y1), ProjectedPoint(x2, y2))

    def residual(self, x: float, y: float) -> float:
        return self.a * x + self.b * y + self.c

    def foot(self, x0: float, y0: float) -> ProjectedPoint:
        """Foot of the perpendicular from (x0, y0) onto the infinite line."""
        a, b, c = self.a, self.b, self.c
        d = a * a + b * b
        return ProjectedPoint(
            (b * (b * x0 - a * y0) - a * c) / d,
            (a * (-b * x0 + a * y0) - b * c) / d,
        )


class TrackProjection(NamedTuple):
    foot: ProjectedPoint
    segment_index: int
    along_track: float
    distance: float
    residual_east: float
    residual_north: float


def project_onto_polyline(points, poly: ReferencePolyline) -> dict:
    """Vectorised closest-point search of many points against every segment.

    Returns a dict of arrays: ``foot`` (m, 2), ``segment_index``,
    ``along_track``, ``distance``, ``residual`` (m, 2).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = len(pts)
    k = poly.n_segments
    seg_index = np.empty(m, dtype=np.int64)
    t_best = np.empty(m)
    # work relative to the first vertex to keep precision with UTM magnitudes
    origin = poly.vertices[0]
    starts = poly.seg_start - origin
    vec = poly.seg_vector
    len2 = poly.seg_length**2
    local = pts - origin
    chunk = max(1, _CHUNK_CELLS // k)
    for lo in range(0, m, chunk):
        p = local[lo:lo + chunk]
        dx = p[:, 0, None] - starts[None, :, 0]
        dy = p[:, 1, None] - starts[None, :, 1]
        t = np.clip((dx * vec[None, :, 0] + dy * vec[None, :, 1]) / len2[None, :], 0.0, 1.0)
        ex = dx - t * vec[None, :, 0]
        ey = dy - t * vec[None, :, 1]
        d2 = ex * ex + ey * ey
        best = np.argmin(d2, axis=1)  # first minimum: lowest segment index wins ties
        seg_index[lo:lo + chunk] = best
        t_best[lo:lo + chunk] = t[np.arange(len(p)), best]
    foot_local = starts[seg_index] + t_best[:, None] * vec[seg_index]
    residual = local - foot_local
    return {
        "foot": foot_local + origin,
        "segment_index": seg_index,
        "along_track": poly.cumulative_length[seg_index] + t_best * poly.seg_length[seg_index],
        "distance": np.hypot(residual[:, 0], residual[:, 1]),
        "residual": residual,
    }


def closest_point_on_polyline(fix, poly: ReferencePolyline) -> TrackProjection:
    """Nearest point of ``poly`` to one projected fix."""
    r = project_onto_polyline([fix], poly)
    return TrackProjection(
        ProjectedPoint(float(r["foot"][0, 0]), float(r["foot"][0, 1])),
        int(r["segment_index"][0]),
        float(r["along_track"][0]),
        float(r["distance"][0]),
        float(r["residual"][0, 0]),
        float(r["residual"][0, 1]),
    )


@dataclass
class ResidualSeries:
    """Per-epoch residual vectors (fix minus foot point), time-indexed."""

    times: np.ndarray
    east: np.ndarray
    north: np.ndarray
    distance: np.ndarray
    foot: np.ndarray
    segment_index: np.ndarray
    along_track: np.ndarray
    gap_before: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def seconds(self) -> np.ndarray:
        return (self.times - self.times[0]).astype(np.int64).astype(float)

    def select(self, mask) -> "ResidualSeries":
        mask = np.asarray(mask)
        times = self.times[mask]
        steps = np.diff(times).astype(np.int64)
        return ResidualSeries(
            times, self.east[mask], self.north[mask], self.distance[mask],
            self.foot[mask], self.segment_index[mask], self.along_track[mask],
            np.concatenate([[False], steps > 1]) if len(times) else np.zeros(0, bool),
        )

    def excluding(self, windows) -> "ResidualSeries":
        """Drop epochs falling inside any ``(start, end)`` time window."""
        keep = np.ones(len(self), dtype=bool)
        for start, end in windows:
            keep &= ~((self.times >= np.datetime64(start, "s")) & (self.times <= np.datetime64(end, "s")))
        return self.select(keep)


def residual_series(track: ProjectedTrack, poly: ReferencePolyline) -> ResidualSeries:
    """Project every fix of ``track`` onto ``poly``."""
    if len(track) == 0:
        raise EmptySeries("no fixes to project")
    r = project_onto_polyline(track.points, poly)
    return ResidualSeries(
        times=track.times.copy(),
        east=r["residual"][:, 0],
        north=r["residual"][:, 1],
        distance=r["distance"],
        foot=r["foot"],
        segment_index=r["segment_index"],
        along_track=r["along_track"],
        gap_before=np.asarray(track.gap_before, dtype=bool).copy(),
    )


# -- statistics --------------------------------------------------------------


def confidence_scale(level: float) -> float:
    """Radius multiplier of a 2-D Gaussian confidence ellipse.

    The square root of the chi-square quantile with two degrees of freedom;
    ``confidence_scale(0.95) ≈ 2.4477``.
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    return math.sqrt(stats.chi2.ppf(level, df=2))


@dataclass(frozen=True)
class ConfidenceEllipse:
    level: float
    semi_major: float
    semi_minor: float
    orientation_deg: float  # major-axis angle, counter-clockwise from east
    center: ProjectedPoint

    @property
    def mean_radius(self) -> float:
        """Radius of the circle with the same area."""
        return math.sqrt(self.semi_major * self.semi_minor)

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "semi_major_m": self.semi_major,
            "semi_minor_m": self.semi_minor,
            "orientation_deg": self.orientation_deg,
            "center_east_m": self.center.easting,
            "center_north_m": self.center.northing,
        }


@dataclass
class AccuracyStats:
    n: int
    mean_east: float
    mean_north: float
    rmse: float
    covariance: np.ndarray
    ellipses: Dict[float, ConfidenceEllipse]
    percentile_95_distance: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_east_m": self.mean_east,
            "mean_north_m": self.mean_north,
            "rmse_m": self.rmse,
            "covariance_m2": self.covariance.tolist(),
            "percentile_95_distance_m": self.percentile_95_distance,
            "ellipses": [self.ellipses[k].as_dict() for k in sorted(self.ellipses)],
        }


def _ellipses(mean, cov, levels) -> Dict[float, ConfidenceEllipse]:
    eigval, eigvec = np.linalg.eigh(cov)
    eigval = np.clip(eigval, 0.0, None)
    major = eigvec[:, 1]
    angle = math.degrees(math.atan2(major[1], major[0]))
    # an axis has no direction; fold into (-90, 90]
    if angle <= -90:
        angle += 180
    elif angle > 90:
        angle -= 180
    if eigval[1] == 0:
        angle = 0.0
    center = ProjectedPoint(float(mean[0]), float(mean[1]))
    out = {}
    for level in levels:
        s = confidence_scale(level)
        out[level] = ConfidenceEllipse(
            level, s * math.sqrt(eigval[1]), s * math.sqrt(eigval[0]), angle, center
        )
    return out


def accuracy_stats(
    rs: Union[ResidualSeries, np.ndarray],
    levels: Sequence[float] = CONFIDENCE_LEVELS,
) -> AccuracyStats:
    """Summarise residuals: mean, RMSE of distance, covariance and ellipses.

    ``rs`` may also be a plain ``(n, 2)`` array of east/north residuals.
    Ellipse semi-axes are the covariance eigenvalues' square roots scaled by
    :func:`confidence_scale`.
    """
    if isinstance(rs, ResidualSeries):
        r = np.column_stack([rs.east, rs.north])
    else:
        r = np.asarray(rs, dtype=float)
        if r.ndim != 2 or r.shape[1] != 2:
            raise ValueError("residuals must have shape (n, 2)")
    n = len(r)
    if n < 2:
        raise InsufficientData(f"need at least 2 residuals, got {n}")
    mean = r.mean(axis=0)
    cov = np.cov(r, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)
    dist = np.hypot(r[:, 0], r[:, 1])
    return AccuracyStats(
        n=n,
        mean_east=float(mean[0]),
        mean_north=float(mean[1]),
        rmse=float(np.sqrt(np.mean(dist**2))),
        covariance=cov,
        ellipses=_ellipses(mean, cov, levels),
        percentile_95_distance=float(np.percentile(dist, 95)),
    )


# -- loading -----------------------------------------------------------------


def _looks_geodetic(coords: np.ndarray) -> bool:
    return bool(np.all(np.abs(coords) <= 180.0))


def _from_coordinates(coords, geodetic_order, params, survey_error_bound):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] < 2:
        raise MalformedGeometry("expected a list of coordinate pairs")
    coords = coords[:, :2]
    if _looks_geodetic(coords):
        if geodetic_order == "lonlat":
            lon, lat = coords[:, 0], coords[:, 1]
        else:
            lat, lon = coords[:, 0], coords[:, 1]
        e, n = geodetic_to_projected(lat, lon, params)
        coords = np.column_stack([e, n])
    if len(coords) < 2:
        raise TooFewVertices("polyline needs at least 2 vertices")
    closed = np.hypot(*(coords[-1] - coords[0])) <= CLOSURE_TOLERANCE_M
    if closed:
        coords = coords[:-1]
    return ReferencePolyline(coords, closed=closed, survey_error_bound=survey_error_bound)


def _geojson_coordinates(obj):
    kind = obj.get("type")
    if kind == "FeatureCollection":
        features = obj.get("features") or []
        if len(features) != 1:
            raise MalformedGeometry("FeatureCollection must hold exactly one feature")
        return _geojson_coordinates(features[0])
    if kind == "Feature":
        geometry = obj.get("geometry")
        if not geometry:
            raise MalformedGeometry("feature without geometry")
        return _geojson_coordinates(geometry)
    if kind == "LineString":
        return obj["coordinates"]
    if kind == "Polygon":
        # exterior ring; RFC 7946 rings repeat the first position
        return obj["coordinates"][0]
    raise MalformedGeometry(f"unsupported geometry type {kind!r}")


def load_polyline(
    source: Union[str, Path, io.TextIOBase],
    params: Optional[ProjectionParams] = None,
    survey_error_bound: float = DEFAULT_SURVEY_ERROR_BOUND_M,
) -> ReferencePolyline:
    """Read a reference track from GeoJSON or headerless CSV.

    GeoJSON positions are ``[lon, lat]`` (RFC 7946). CSV rows are ``lat,lon``
    or ``easting,northing``; the two are told apart by magnitude. Geodetic
    input is projected with ``params``. The polyline is closed when its
    first and last vertices lie within 1 cm of each other (GeoJSON Polygon
    rings always are).
    """
    params = params or get_projection()
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "")
    else:
        path = Path(source)
        text = path.read_text()
        name = path.name
    stripped = text.lstrip()
    if stripped.startswith("{") or name.lower().endswith((".geojson", ".json")):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedGeometry(f"invalid GeoJSON: {exc}") from None
        coords = _geojson_coordinates(obj)
        try:
            return _from_coordinates(coords, "lonlat", params, survey_error_bound)
        except (TypeError, ValueError) as exc:
            raise MalformedGeometry(f"bad coordinates: {exc}") from None
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        try:
            rows.append([float(row[0]), float(row[1])])
        except (ValueError, IndexError):
            raise MalformedGeometry(f"bad CSV row {row!r}") from None
    return _from_coordinates(rows, "latlon", params, survey_error_bound)
