"""Synthetic walking surveys with first-order Gauss-Markov position error.

The random stream is numpy's PCG64 bit generator seeded with the integer
``ErrorModel.seed``; standard normals come from ``Generator.standard_normal``
drawn once as an ``(n, 2)`` array (east, north). PCG64 output is identical on
every platform, so golden files stay stable.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import InvalidScenario
from .geodesy import (
    ProjectionParams,
    geodetic_to_projected,
    get_projection,
    projected_to_geodetic,
)
from .nmea import GnssFix, FixQuality, ddmm_to_degrees, degrees_to_ddmm, format_sentence
from .survey import ProjectedTrack
from .track import ReferencePolyline, load_polyline

__all__ = [
    "DEFAULT_DEVICE",
    "DEFAULT_START",
    "ErrorModel",
    "Scenario",
    "SimulatedSurvey",
    "ar1_noise",
    "bench_scenario",
    "emit_nmea",
    "garden_loop",
    "load_scenario_config",
    "field_scenario",
    "quantize_degrees",
    "simulate_static",
    "simulate_survey",
]

STUDY_AREA = (45.672, 11.928)
DEFAULT_DEVICE = "Xiaomi - Redmi Note 8T"
DEFAULT_START = dt.datetime(2021, 2, 3, 11, 31, 0, tzinfo=dt.timezone.utc)
KNOTS_PER_MPS = 1.0 / 0.514444


@dataclass(frozen=True)
class ErrorModel:
    sigma: float = 1.2
    correlation_time: float = 30.0
    seed: int = 0
    quantize: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidScenario("sigma must be >= 0")
        if not self.correlation_time > 0:
            raise InvalidScenario("correlation_time must be > 0")

    @property
    def phi(self) -> float:
        """AR(1) coefficient for a 1 s step."""
        return math.exp(-1.0 / self.correlation_time)


@dataclass
class Scenario:
    polyline: ReferencePolyline
    walk_speed: float = 1.4
    stops: Sequence[Tuple[float, float]] = ()
    static_lead: float = 180.0
    static_tail: float = 180.0
    sample_rate: float = 1.0
    start_along: float = 0.0
    start_time: dt.datetime = DEFAULT_START

    def validate(self) -> None:
        if self.walk_speed <= 0:
            raise InvalidScenario("walk_speed must be positive")
        if self.sample_rate != 1.0:
            raise InvalidScenario("only 1 Hz sampling is supported")
        if self.static_lead < 0 or self.static_tail < 0:
            raise InvalidScenario("static periods must be >= 0")
        for along, duration in self.stops:
            if not 0 < along < self.polyline.length:
                raise InvalidScenario(f"stop at {along} m outside the track")
            if duration <= 0:
                raise InvalidScenario("stop durations must be positive")
        alongs = [a for a, _ in self.stops]
        if alongs != sorted(alongs):
            raise InvalidScenario("stops must be ordered along the track")

    @property
    def walk_length(self) -> float:
        return self.polyline.length

    @property
    def duration(self) -> float:
        return (
            self.static_lead + self.walk_length / self.walk_speed
            + sum(d for _, d in self.stops) + self.static_tail
        )

    def dwell_intervals(self) -> List[Tuple[float, float, float]]:
        """True ``(start_s, end_s, along_m)`` of every stationary period."""
        out = [(0.0, self.static_lead, self.start_along)]
        t = self.static_lead
        along = 0.0
        for stop_along, d in self.stops:
            t += (stop_along - along) / self.walk_speed
            out.append((t, t + d, self.start_along + stop_along))
            t += d
            along = stop_along
        t += (self.walk_length - along) / self.walk_speed
        out.append((t, t + self.static_tail, self.start_along + self.walk_length))
        return out


@dataclass
class SimulatedSurvey:
    truth: ProjectedTrack
    fixes: List[GnssFix]
    noise: np.ndarray
    dwell: List[Tuple[np.datetime64, np.datetime64, Tuple[float, float]]]
    scenario: Scenario = None
    error_model: ErrorModel = None

    def __iter__(self):
        # unpacks as (true path, noisy fixes)
        return iter((self.truth, self.fixes))


def ar1_noise(n: int, sigma: float, correlation_time: float, rng, dims: int = 2) -> np.ndarray:
    """Stationary AR(1) noise at 1 Hz, shape ``(n, dims)``.

    ``e[t] = phi * e[t-1] + sigma * sqrt(1 - phi^2) * w[t]`` with
    ``phi = exp(-1 / correlation_time)`` and ``e[0] ~ N(0, sigma^2)``.
    """
    w = rng.standard_normal((n, dims))
    phi = math.exp(-1.0 / correlation_time)
    innovation = sigma * math.sqrt(1.0 - phi * phi)
    e = np.empty((n, dims))
    if n == 0:
        return e
    e[0] = sigma * w[0]
    for t in range(1, n):
        e[t] = phi * e[t - 1] + innovation * w[t]
    return e


def quantize_degrees(value: float, axis: str) -> float:
    """Snap to the ddmm.mmmm grid exactly as a parser would read it back."""
    text, hemi = degrees_to_ddmm(value, axis)
    return ddmm_to_degrees(text, hemi)


def _along_at(sc: Scenario, t: np.ndarray) -> np.ndarray:
    """Along-track position at times ``t`` (seconds from start)."""
    knots_t = [0.0, sc.static_lead]
    knots_s = [0.0, 0.0]
    along = 0.0
    for stop_along, d in sc.stops:
        knots_t.append(knots_t[-1] + (stop_along - along) / sc.walk_speed)
        knots_s.append(stop_along)
        knots_t.append(knots_t[-1] + d)
        knots_s.append(stop_along)
        along = stop_along
    knots_t.append(knots_t[-1] + (sc.walk_length - along) / sc.walk_speed)
    knots_s.append(sc.walk_length)
    knots_t.append(knots_t[-1] + sc.static_tail)
    knots_s.append(sc.walk_length)
    return np.interp(t, knots_t, knots_s)


def _fixes_from_xy(noisy: np.ndarray, start: dt.datetime, params, quantize: bool) -> List[GnssFix]:
    """1 Hz SPS fixes at projected positions ``noisy`` starting at ``start``."""
    n = len(noisy)
    lat, lon = projected_to_geodetic(noisy[:, 0], noisy[:, 1], params)
    lat = np.atleast_1d(lat)
    lon = np.atleast_1d(lon)
    fixes = []
    for i in range(n):
        la, lo = float(lat[i]), float(lon[i])
        if quantize:
            la, lo = quantize_degrees(la, "lat"), quantize_degrees(lo, "lon")
        fixes.append(
            GnssFix(
                timestamp=start + dt.timedelta(seconds=i),
                latitude=la,
                longitude=lo,
                fix_quality=FixQuality.SPS,
                fix_quality_code=1,
                satellites_used=12,
                hdop=0.9,
                altitude_m=50.0,
            )
        )
    return fixes


def simulate_survey(
    sc: Scenario,
    em: ErrorModel,
    params: Optional[ProjectionParams] = None,
    survey_id: str = "",
) -> SimulatedSurvey:
    """Generate the true 1 Hz path of ``sc`` and a noisy fix series.

    Noise is added in the projected plane, then converted back to geodetic
    coordinates and, if ``em.quantize``, snapped to the NMEA grid.
    """
    sc.validate()
    params = params or get_projection()
    n = int(math.floor(sc.duration)) + 1
    t = np.arange(n, dtype=float)
    along = _along_at(sc, t) + sc.start_along
    true_xy = sc.polyline.point_at(along)
    rng = np.random.Generator(np.random.PCG64(em.seed))
    noise = ar1_noise(n, em.sigma, em.correlation_time, rng)
    noisy = true_xy + noise

    start = sc.start_time.astimezone(dt.timezone.utc)
    fixes = _fixes_from_xy(noisy, start, params, em.quantize)
    t0 = np.datetime64(start.replace(tzinfo=None), "s")
    times = t0 + np.arange(n).astype("timedelta64[s]")
    truth = ProjectedTrack(times, true_xy[:, 0], true_xy[:, 1], survey_id=survey_id)
    dwell = []
    for s0, s1, a in sc.dwell_intervals():
        p = sc.polyline.point_at(a)
        dwell.append((
            t0 + np.timedelta64(int(round(s0 * 1000)), "ms"),
            t0 + np.timedelta64(int(round(s1 * 1000)), "ms"),
            (float(p[0]), float(p[1])),
        ))
    return SimulatedSurvey(truth, fixes, noise, dwell, sc, em)


def simulate_static(
    duration: float,
    em: ErrorModel,
    point: Optional[Tuple[float, float]] = None,
    params: Optional[ProjectionParams] = None,
    start_time: dt.datetime = DEFAULT_START,
    survey_id: str = "",
) -> SimulatedSurvey:
    """Static-only survey: ``duration`` seconds at one projected ``point``.

    With ``em.sigma = 0`` and quantization on every fix carries the same
    ddmm.mmmm coordinates.
    """
    if not duration > 0:
        raise InvalidScenario("static duration must be positive")
    params = params or get_projection()
    if point is None:
        point = tuple(geodetic_to_projected(*STUDY_AREA, params))
    n = int(math.floor(duration)) + 1
    true_xy = np.tile(np.asarray(point, dtype=float), (n, 1))
    rng = np.random.Generator(np.random.PCG64(em.seed))
    noise = ar1_noise(n, em.sigma, em.correlation_time, rng)
    start = start_time.astimezone(dt.timezone.utc)
    fixes = _fixes_from_xy(true_xy + noise, start, params, em.quantize)
    t0 = np.datetime64(start.replace(tzinfo=None), "s")
    times = t0 + np.arange(n).astype("timedelta64[s]")
    truth = ProjectedTrack(times, true_xy[:, 0], true_xy[:, 1], survey_id=survey_id)
    dwell = [(times[0], times[-1], (float(point[0]), float(point[1])))]
    return SimulatedSurvey(truth, fixes, noise, dwell, None, em)


# -- NMEA emission -----------------------------------------------------------


def _hhmmss(t: dt.datetime) -> str:
    return t.strftime("%H%M%S") + ".00"


def emit_nmea(
    fixes: Sequence[GnssFix],
    device_name: str = DEFAULT_DEVICE,
    start: Optional[dt.datetime] = None,
    talker: str = "GN",
) -> str:
    """Render fixes as an NMEA 0183 log: one RMC and one GGA per epoch.

    The file opens with ``#`` header lines carrying the device model and the
    survey start time (ISO 8601, UTC), the layout the ingest service's
    default header patterns recognise::

        # Device: Xiaomi - Redmi Note 8T
        # Start: 2021-02-03T11:31:00Z

    Coordinates are written as ddmm.mmmm / dddmm.mmmm. Lines end in CRLF.
    """
    if start is None:
        start = fixes[0].timestamp if fixes else DEFAULT_START
    start = start.astimezone(dt.timezone.utc)
    lines = [
        f"# Device: {device_name}",
        f"# Start: {start.strftime('%Y-%m-%dT%H:%M:%SZ')}",
        "# Generator: gardentrack simulate",
    ]
    lat = np.array([f.latitude for f in fixes], dtype=float)
    lon = np.array([f.longitude for f in fixes], dtype=float)
    valid = np.isfinite(lat) & np.isfinite(lon)
    east = np.full(len(fixes), np.nan)
    north = np.full(len(fixes), np.nan)
    if valid.any():
        east[valid], north[valid] = geodetic_to_projected(lat[valid], lon[valid])
    for i, fix in enumerate(fixes):
        ts = fix.timestamp.astimezone(dt.timezone.utc)
        hms = _hhmmss(ts)
        if valid[i]:
            lat_f, lat_h = degrees_to_ddmm(fix.latitude, "lat")
            lon_f, lon_h = degrees_to_ddmm(fix.longitude, "lon")
        else:
            lat_f = lat_h = lon_f = lon_h = ""
        speed_kn = course = ""
        if i > 0 and valid[i] and valid[i - 1]:
            de, dn = east[i] - east[i - 1], north[i] - north[i - 1]
            secs = (fix.timestamp - fixes[i - 1].timestamp).total_seconds() or 1.0
            speed_kn = f"{math.hypot(de, dn) / secs * KNOTS_PER_MPS:.2f}"
            course = f"{math.degrees(math.atan2(de, dn)) % 360:.1f}"
        status = "V" if fix.excluded else "A"
        mode = "N" if fix.excluded else "A"
        rmc = (
            f"{talker}RMC,{hms},{status},{lat_f},{lat_h},{lon_f},{lon_h},"
            f"{speed_kn},{course},{ts.strftime('%d%m%y')},,,{mode}"
        )
        hdop = "" if fix.hdop is None else f"{fix.hdop:.1f}"
        alt = "" if fix.altitude_m is None else f"{fix.altitude_m:.1f}"
        gga = (
            f"{talker}GGA,{hms},{lat_f},{lat_h},{lon_f},{lon_h},{fix.fix_quality_code},"
            f"{fix.satellites_used:02d},{hdop},{alt},M,47.0,M,,"
        )
        lines.append(format_sentence(rmc))
        lines.append(format_sentence(gga))
    return "\r\n".join(lines) + "\r\n"


# -- built-in scenarios ------------------------------------------------------


def garden_loop(
    straight: float = 450.0,
    radius: float = 110.0,
    spacing: float = 1.0,
    center: Optional[Tuple[float, float]] = None,
    params: Optional[ProjectionParams] = None,
) -> ReferencePolyline:
    """Closed north-south stadium loop with vertices every ~``spacing`` m.

    Defaults give a ~1.59 km ring; walked at 1.4 m/s with two 3-minute
    statics and short stops that is about 1500 fixes. The loop starts at the
    south end of the eastern straight and runs counter-clockwise.
    """
    if center is None:
        center = tuple(geodetic_to_projected(*STUDY_AREA, params or get_projection()))
    cx, cy = center
    half = straight / 2.0
    n_straight = max(1, int(round(straight / spacing)))
    n_arc = max(2, int(round(math.pi * radius / spacing)))
    pts = []
    # eastern straight, northward
    for i in range(n_straight):
        pts.append((cx + radius, cy - half + straight * i / n_straight))
    # northern arc, east to west
    for i in range(n_arc):
        a = math.pi * i / n_arc
        pts.append((cx + radius * math.cos(a), cy + half + radius * math.sin(a)))
    # western straight, southward
    for i in range(n_straight):
        pts.append((cx - radius, cy + half - straight * i / n_straight))
    # southern arc, west to east
    for i in range(n_arc):
        a = math.pi + math.pi * i / n_arc
        pts.append((cx + radius * math.cos(a), cy - half + radius * math.sin(a)))
    return ReferencePolyline(np.array(pts), closed=True)


def field_scenario(
    polyline: Optional[ReferencePolyline] = None,
    stop_duration: float = 12.0,
    n_stops: int = 2,
    start_time: dt.datetime = DEFAULT_START,
) -> Scenario:
    """Survey protocol of the field campaign: 3 min static, a closed-loop walk
    at 1.4 m/s with ``n_stops`` evenly spaced short stops, 3 min static."""
    poly = polyline or garden_loop()
    stops = [(poly.length * (k + 1) / (n_stops + 1), stop_duration) for k in range(n_stops)]
    return Scenario(poly, 1.4, stops, 180.0, 180.0, start_time=start_time)


def bench_scenario(polyline: Optional[ReferencePolyline] = None, **kw) -> Scenario:
    """Same protocol with three mid-track bench stops."""
    return field_scenario(polyline, n_stops=3, **kw)


def _parse_time(text: str) -> dt.datetime:
    t = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=dt.timezone.utc)


def load_scenario_config(
    source: Union[str, Path, dict], params: Optional[ProjectionParams] = None
) -> tuple:
    """Build ``(Scenario, ErrorModel, device_model)`` from a JSON config.

    Schema (every key optional)::

        {
          "polyline": "track.geojson",        # default: built-in garden loop
          "walk_speed_mps": 1.4,
          "stops": [{"along_m": 530.0, "duration_s": 12}],
          "n_stops": 2, "stop_duration_s": 12,  # used when "stops" is absent
          "static_lead_s": 180, "static_tail_s": 180,
          "start_time": "2021-02-03T11:31:00Z",
          "device_model": "Xiaomi - Redmi Note 8T",
          "error_model": {"sigma_m": 1.2, "correlation_time_s": 30,
                          "seed": 0, "quantize": true}
        }

    Relative polyline paths resolve against the config file's directory.
    """
    base = Path(".")
    if isinstance(source, dict):
        cfg = source
    else:
        path = Path(source)
        cfg = json.loads(path.read_text())
        base = path.parent
    try:
        poly_ref = cfg.get("polyline")
        if poly_ref:
            p = Path(poly_ref)
            poly = load_polyline(p if p.is_absolute() else base / p, params)
        else:
            poly = garden_loop(params=params)
        start = _parse_time(cfg["start_time"]) if "start_time" in cfg else DEFAULT_START
        if "stops" in cfg:
            stops = [(float(s["along_m"]), float(s["duration_s"])) for s in cfg["stops"]]
        else:
            n = int(cfg.get("n_stops", 2))
            d = float(cfg.get("stop_duration_s", 12.0))
            stops = [(poly.length * (k + 1) / (n + 1), d) for k in range(n)]
        sc = Scenario(
            poly,
            float(cfg.get("walk_speed_mps", 1.4)),
            stops,
            float(cfg.get("static_lead_s", 180.0)),
            float(cfg.get("static_tail_s", 180.0)),
            start_time=start,
        )
        emc = cfg.get("error_model", {})
        em = ErrorModel(
            float(emc.get("sigma_m", 1.2)),
            float(emc.get("correlation_time_s", 30.0)),
            int(emc.get("seed", 0)),
            bool(emc.get("quantize", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"bad scenario config: {exc}") from None
    sc.validate()
    return sc, em, str(cfg.get("device_model", DEFAULT_DEVICE))
