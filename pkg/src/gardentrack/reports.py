"""CSV / GeoJSON / JSON writers for every report the pipeline produces.

All writers are deterministic (stable key order, fixed float formatting) and
file output goes through :func:`atomic_write` so readers never observe a
partially written file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .behaviour import Hotspot, StopEvent
from .geodesy import ProjectionParams, get_projection, projected_to_geodetic
from .quality import AcfSeries, PrecisionReport
from .track import AccuracyStats

__all__ = [
    "acf_csv",
    "atomic_write",
    "dumps_json",
    "ellipses_csv",
    "fixes_csv",
    "hotspots_csv",
    "hotspots_geojson",
    "precision_csv",
    "precision_table_csv",
    "read_fixes_csv",
    "stops_csv",
    "stops_geojson",
]


def atomic_write(path: Union[str, Path], data: Union[str, bytes]) -> Path:
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return v


def _iso(t) -> str:
    return str(np.datetime64(t, "s")) + "Z"


def fixes_csv(fixes) -> str:
    rows = (
        (
            f.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
            repr(float(f.latitude)), repr(float(f.longitude)),
            f.fix_quality_code, f.satellites_used,
            "" if f.hdop is None else f.hdop,
            "" if f.altitude_m is None else f.altitude_m,
        )
        for f in fixes
    )
    return _csv(
        ["timestamp", "latitude", "longitude", "fix_quality", "satellites", "hdop", "altitude_m"],
        rows,
    )


def read_fixes_csv(source) -> list:
    """Inverse of :func:`fixes_csv`; coordinates round-trip exactly."""
    import datetime as dt

    from .nmea import FixQuality, GnssFix

    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    fixes = []
    for row in csv.DictReader(io.StringIO(text)):
        code = int(row["fix_quality"])
        fixes.append(GnssFix(
            timestamp=dt.datetime.strptime(row["timestamp"], "%Y-%m-%dT%H:%M:%SZ").replace(
                tzinfo=dt.timezone.utc),
            latitude=float(row["latitude"]),
            longitude=float(row["longitude"]),
            fix_quality=FixQuality.from_code(code),
            fix_quality_code=code,
            satellites_used=int(row["satellites"]),
            hdop=float(row["hdop"]) if row["hdop"] else None,
            altitude_m=float(row["altitude_m"]) if row["altitude_m"] else None,
        ))
    return fixes


def acf_csv(series: AcfSeries) -> str:
    return _csv(
        ["lag_s", "value", "significance_bound"],
        ((int(k), float(v), series.significance_bound) for k, v in zip(series.lags, series.values)),
    )


def precision_csv(reports: Sequence[PrecisionReport], survey_label: str = "") -> str:
    return _csv(
        ["survey", "window", "n", "sigma_east_m", "sigma_north_m"],
        ((survey_label, r.label, r.n, r.sigma_east, r.sigma_north) for r in reports),
    )


def ellipses_csv(stats: AccuracyStats) -> str:
    return _csv(
        ["level", "semi_major_m", "semi_minor_m", "orientation_deg", "center_east_m", "center_north_m"],
        (
            (e.level, e.semi_major, e.semi_minor, e.orientation_deg, e.center.easting, e.center.northing)
            for e in (stats.ellipses[k] for k in sorted(stats.ellipses))
        ),
    )


def stops_csv(events: Sequence[StopEvent]) -> str:
    return _csv(
        ["survey_id", "start", "end", "duration_s", "easting", "northing", "dispersion_m"],
        (
            (e.survey_id, _iso(e.start), _iso(e.end), e.duration,
             e.centroid.easting, e.centroid.northing, e.dispersion)
            for e in events
        ),
    )


def hotspots_csv(hotspots: Sequence[Hotspot]) -> str:
    return _csv(
        ["hotspot", "easting", "northing", "radius_m", "total_dwell_s", "survey_count", "event_count"],
        (
            (i, h.centroid.easting, h.centroid.northing, h.radius, h.total_dwell,
             h.survey_count, len(h.members))
            for i, h in enumerate(hotspots)
        ),
    )


def _point_feature(easting, northing, properties, params) -> dict:
    lat, lon = projected_to_geodetic(easting, northing, params)
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [round(lon, 9), round(lat, 9)]},
        "properties": properties,
    }


def _collection(features, params: ProjectionParams) -> dict:
    return {
        "type": "FeatureCollection",
        "features": features,
        "properties": {"projected_crs": params.registry_code},
    }


def stops_geojson(events: Sequence[StopEvent], params: Optional[ProjectionParams] = None) -> dict:
    """Stop events as RFC 7946 Point features (WGS84 lon/lat)."""
    params = params or get_projection()
    features = [
        _point_feature(
            e.centroid.easting, e.centroid.northing,
            {
                "survey_id": e.survey_id,
                "start": _iso(e.start),
                "end": _iso(e.end),
                "duration_s": e.duration,
                "dispersion_m": round(e.dispersion, 6),
                "easting": round(e.centroid.easting, 6),
                "northing": round(e.centroid.northing, 6),
            },
            params,
        )
        for e in events
    ]
    return _collection(features, params)


def hotspots_geojson(hotspots: Sequence[Hotspot], params: Optional[ProjectionParams] = None) -> dict:
    params = params or get_projection()
    features = [
        _point_feature(
            h.centroid.easting, h.centroid.northing,
            {
                "hotspot": i,
                "total_dwell_s": h.total_dwell,
                "survey_count": h.survey_count,
                "event_count": len(h.members),
                "radius_m": round(h.radius, 6),
                "survey_ids": sorted({e.survey_id for e in h.members}),
                "easting": round(h.centroid.easting, 6),
                "northing": round(h.centroid.northing, 6),
            },
            params,
        )
        for i, h in enumerate(hotspots)
    ]
    return _collection(features, params)


def precision_table_csv(rows) -> str:
    """Per-survey precision in the start/end layout of a field campaign table.

    ``rows`` holds ``(survey_label, sensor, reports)`` tuples where
    ``reports`` are the :class:`PrecisionReport` of one survey. Missing
    windows are left blank. Values are metres at millimetre resolution.
    """
    def cell(rep, axis):
        return "" if rep is None else f"{getattr(rep, axis):.3f}"

    out = []
    for label, sensor, reps in rows:
        by = {r.label: r for r in reps}
        s, e = by.get("survey_start"), by.get("survey_end")
        out.append((label, sensor, cell(s, "sigma_east"), cell(s, "sigma_north"),
                    cell(e, "sigma_east"), cell(e, "sigma_north")))
    return _csv(["survey", "sensor", "start_x_m", "start_y_m", "end_x_m", "end_y_m"], out)
