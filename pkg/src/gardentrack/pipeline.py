"""End-to-end survey analysis shared by the CLI and the ingest service.

parse -> project -> residuals -> accuracy / precision / ACF -> stops.
Accuracy and ACF need a reference polyline and are reported as unavailable
without one; stop detection always runs.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import reports
from .behaviour import (
    DEFAULT_FILTER_WINDOW_S,
    DEFAULT_MERGE_RADIUS_M,
    DEFAULT_MIN_DURATION_S,
    DEFAULT_SPEED_THRESHOLD,
    StopEvent,
    detect_stops,
    median_filter,
    speed_series,
)
from .exceptions import ConfigError, GardenTrackError, UnknownProjection
from .geodesy import DEFAULT_PROJECTION, ProjectedPoint, get_projection
from .nmea import parse_stream
from .quality import (
    DEFAULT_MAX_LAG_S,
    DEFAULT_PRECISION_EPOCHS,
    DEFAULT_WINDOW_S,
    coordinate_acf,
    extract_static_windows,
    residual_acf,
    static_precision,
)
from .survey import ProjectedTrack, project_fixes
from .track import ReferencePolyline, accuracy_stats, load_polyline, residual_series

__all__ = ["PipelineConfig", "SurveyAnalysis", "analyze_fixes", "analyze_text", "event_from_dict"]


@dataclass
class PipelineConfig:
    """Analysis settings; defaults follow the field protocol (1 Hz, 180 s
    statics, 5 s median, 10 s minimum stop, 120 s ACF lag)."""

    polyline: Optional[str] = None
    projection: str = DEFAULT_PROJECTION
    speed_threshold: float = DEFAULT_SPEED_THRESHOLD
    min_duration: float = DEFAULT_MIN_DURATION_S
    filter_window: int = DEFAULT_FILTER_WINDOW_S
    static_window: float = DEFAULT_WINDOW_S
    static_placement: str = "both"
    precision_epochs: Optional[int] = DEFAULT_PRECISION_EPOCHS
    max_lag: int = DEFAULT_MAX_LAG_S
    acf_source: str = "residual"
    merge_radius: float = DEFAULT_MERGE_RADIUS_M

    def validate(self) -> None:
        for name in ("speed_threshold", "min_duration", "static_window", "merge_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.filter_window < 3 or self.filter_window % 2 == 0:
            raise ConfigError("filter_window must be an odd integer >= 3")
        if self.static_placement not in ("start", "end", "both"):
            raise ConfigError("static_placement must be start, end or both")
        if self.acf_source not in ("residual", "coordinate"):
            raise ConfigError("acf_source must be 'residual' or 'coordinate'")
        if self.precision_epochs is not None and self.precision_epochs < 2:
            raise ConfigError("precision_epochs must be >= 2 or null")
        if self.max_lag < 1:
            raise ConfigError("max_lag must be >= 1")
        if self.polyline is not None and not Path(self.polyline).exists():
            raise ConfigError(f"polyline file {self.polyline!r} does not exist")
        try:
            get_projection(self.projection)
        except UnknownProjection as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown pipeline settings: {sorted(unknown)}")
        return cls(**data)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SurveyAnalysis:
    survey_id: str
    parse: dict
    track: ProjectedTrack
    stops: list
    accuracy: Optional[dict] = None
    accuracy_static_excluded: Optional[dict] = None
    accuracy_stats: object = None
    precision: list = field(default_factory=list)
    acf: dict = field(default_factory=dict)
    unavailable: dict = field(default_factory=dict)

    def summary(self, config: PipelineConfig) -> dict:
        """Deterministic JSON-ready payload of the whole analysis."""
        return {
            "survey_id": self.survey_id,
            "config": config.as_dict(),
            "parse": self.parse,
            "n_fixes": len(self.track),
            "accuracy": self.accuracy,
            "accuracy_static_excluded": self.accuracy_static_excluded,
            "precision": [p.as_dict() for p in self.precision],
            "acf": {
                k: {"lags": v.lags.tolist(), "values": v.values.tolist(),
                    "n": v.n, "significance_bound": v.significance_bound}
                for k, v in self.acf.items()
            },
            "stops": [
                {**e.as_dict(), "start": reports._iso(e.start), "end": reports._iso(e.end)}
                for e in self.stops
            ],
            "unavailable": self.unavailable,
        }

    def write_bundle(self, directory: Union[str, Path], config: PipelineConfig) -> dict:
        """Write every report file into ``directory``; returns name -> path."""
        d = Path(directory)
        params = get_projection(config.projection)
        out = {}

        def put(name, text):
            out[name] = str(reports.atomic_write(d / name, text))

        put("summary.json", reports.dumps_json(self.summary(config)))
        if self.accuracy_stats is not None:
            put("accuracy.json", reports.dumps_json({
                "full": self.accuracy, "static_excluded": self.accuracy_static_excluded,
            }))
            put("ellipses.csv", reports.ellipses_csv(self.accuracy_stats))
        if self.precision:
            put("precision.csv", reports.precision_csv(self.precision, self.survey_id))
        for name, series in self.acf.items():
            put(f"acf_{name}.csv", reports.acf_csv(series))
        put("stops.geojson", reports.dumps_json(reports.stops_geojson(self.stops, params)))
        put("stops.csv", reports.stops_csv(self.stops))
        return out


class _Unavailable(Exception):
    pass


def _load_poly(polyline, params) -> Optional[ReferencePolyline]:
    if polyline is None or isinstance(polyline, ReferencePolyline):
        return polyline
    return load_polyline(polyline, params)


def analyze_fixes(
    fixes,
    config: Optional[PipelineConfig] = None,
    survey_id: str = "",
    parse_report=None,
    polyline: Optional[ReferencePolyline] = None,
) -> SurveyAnalysis:
    """Run the full analysis on parsed fixes.

    Optional sections that cannot be computed (no polyline, survey too short
    for static windows, ACF preconditions) are listed in ``unavailable``
    with the reason instead of failing the whole run.
    """
    config = config or PipelineConfig()
    params = get_projection(config.projection)
    poly = polyline if polyline is not None else _load_poly(config.polyline, params)
    track = project_fixes(fixes, params, survey_id=survey_id)
    sp = median_filter(speed_series(track), config.filter_window)
    stops = detect_stops(sp, config.speed_threshold, config.min_duration)
    analysis = SurveyAnalysis(
        survey_id,
        parse_report.as_dict() if parse_report is not None else {},
        track,
        stops,
    )

    windows = []
    try:
        windows = extract_static_windows(track, config.static_window, config.static_placement)
        analysis.precision = [static_precision(w, config.precision_epochs) for w in windows]
    except GardenTrackError as exc:
        analysis.unavailable["precision"] = f"{exc.code}: {exc}"

    rs = None
    if poly is None:
        analysis.unavailable["accuracy"] = "no reference polyline configured"
    else:
        rs = residual_series(track, poly)
        stats = accuracy_stats(rs)
        analysis.accuracy_stats = stats
        analysis.accuracy = stats.as_dict()
        if windows:
            try:
                trimmed = rs.excluding([(w.track.times[0], w.track.times[-1]) for w in windows])
                analysis.accuracy_static_excluded = accuracy_stats(trimmed).as_dict()
            except GardenTrackError as exc:
                analysis.unavailable["accuracy_static_excluded"] = f"{exc.code}: {exc}"

    try:
        if config.acf_source == "coordinate":
            east, north = coordinate_acf(track, config.max_lag)
        elif rs is not None:
            east, north = residual_acf(rs, config.max_lag)
        else:
            raise _Unavailable("residual ACF needs a reference polyline")
        analysis.acf = {"east": east, "north": north}
    except _Unavailable as exc:
        analysis.unavailable["acf"] = str(exc)
    except GardenTrackError as exc:
        analysis.unavailable["acf"] = f"{exc.code}: {exc}"
    return analysis


def analyze_text(text: Union[str, bytes], config: Optional[PipelineConfig] = None,
                 survey_id: str = "", default_date: Optional[dt.date] = None,
                 polyline: Optional[ReferencePolyline] = None) -> SurveyAnalysis:
    """Parse an NMEA document and analyse it."""
    lines = text.splitlines()
    fixes, report = parse_stream(lines, default_date=default_date)
    return analyze_fixes(fixes, config, survey_id, report, polyline)


def event_from_dict(d: dict) -> StopEvent:
    """Rebuild a stop event from its report representation."""
    return StopEvent(
        np.datetime64(d["start"].rstrip("Z"), "s"),
        np.datetime64(d["end"].rstrip("Z"), "s"),
        ProjectedPoint(float(d["easting"]), float(d["northing"])),
        float(d["dispersion_m"]),
        d.get("survey_id", ""),
        int(d.get("n_fixes", 0)),
    )
