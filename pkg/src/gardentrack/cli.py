"""``gardentrack`` command line.

Every subcommand reads NMEA logs (or the ``fixes.csv`` written by
``gardentrack parse``), writes its outputs atomically into ``--out`` and
prints a JSON summary on stdout. Errors go to stderr as one JSON object
``{"error": code, "message": text}`` with exit status 2 for configuration
problems (detected before any processing) and 1 for data errors.

Settings come from an optional JSON ``--config`` file, the same file the
service reads::

    {
      "pipeline": {"polyline": "loop.geojson", "speed_threshold": 1.0,
                   "min_duration": 10, "filter_window": 5, "merge_radius": 10,
                   "static_window": 180, "static_placement": "both",
                   "precision_epochs": 100, "max_lag": 120,
                   "acf_source": "residual", "projection": "EPSG:25832"},
      "output_dir": "out",
      "format": "geojson",
      "catalog_root": "catalog", "workers": 2, "api_token": null
    }

Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import reports
from .behaviour import cluster_hotspots, detect_stops, median_filter, speed_series
from .exceptions import ConfigError, GardenTrackError
from .geodesy import get_projection
from .nmea import read_nmea
from .pipeline import PipelineConfig, analyze_fixes
from .quality import coordinate_acf, extract_static_windows, residual_acf, static_precision
from .service.catalog import extract_header_metadata
from .service.config import ServiceConfig, load_service_config
from .simulate import (
    ErrorModel,
    emit_nmea,
    load_scenario_config,
    simulate_static,
    simulate_survey,
)
from .survey import project_fixes
from .track import accuracy_stats, load_polyline, residual_series

__all__ = ["RunConfig", "build_parser", "main"]

_PIPELINE_FLAGS = {
    "polyline": "polyline",
    "projection": "projection",
    "speed_threshold": "speed_threshold",
    "min_duration": "min_duration",
    "filter_window": "filter_window",
    "merge_radius": "merge_radius",
    "static_window": "static_window",
    "static_placement": "static_placement",
    "precision_epochs": "precision_epochs",
    "max_lag": "max_lag",
    "acf_source": "acf_source",
}

_FORMATS = {
    "parse": ("csv", "json"),
    "accuracy": ("csv", "json"),
    "precision": ("csv", "json"),
    "acf": ("csv", "json"),
    "stops": ("geojson", "csv"),
    "hotspots": ("geojson", "csv"),
    "analyze": ("bundle",),
    "simulate": ("nmea",),
}


class _UsageError(ConfigError):
    code = "UsageError"


@dataclass
class RunConfig:
    """Resolved settings of one CLI invocation."""

    inputs: List[str]
    pipeline: PipelineConfig
    output_dir: str = "."
    format: Optional[str] = None
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def validate(self, command: str) -> None:
        for p in self.inputs:
            if not Path(p).is_file():
                raise ConfigError(f"input file {p!r} does not exist")
        self.pipeline.validate()
        allowed = _FORMATS[command]
        if self.format is None:
            self.format = allowed[0]
        if self.format not in allowed:
            raise ConfigError(f"{command} supports --format {', '.join(allowed)}")


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file and flags (flags win) and validate."""
    data = _read_config(getattr(args, "config", None))
    output_dir = data.pop("output_dir", ".")
    fmt = data.pop("format", None)
    if args.command == "serve":
        svc = load_service_config(data=data)
    else:
        svc = ServiceConfig.from_dict(data)
    pipe = svc.pipeline
    for flag, attr in _PIPELINE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(pipe, attr, value)
    if getattr(args, "out", None) is not None:
        output_dir = args.out
    if getattr(args, "format", None) is not None:
        fmt = args.format
    cfg = RunConfig(list(getattr(args, "inputs", []) or []), pipe, output_dir, fmt, svc)
    cfg.validate(args.command)
    return cfg


# -- helpers -------------------------------------------------------------------


def _load_fixes(path: str, default_date=None):
    """Fixes and parse report (``None`` for a fixes CSV) from one input."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(64)
    if head.startswith(b"timestamp,latitude"):
        return reports.read_fixes_csv(p), None
    return read_nmea(p, default_date=default_date)


def _survey_id(path: str) -> str:
    return Path(path).stem


def _write(out_dir: Path, name: str, text: str, written: list) -> None:
    written.append(str(reports.atomic_write(out_dir / name, text)))


def _polyline(cfg: RunConfig, required: bool):
    if cfg.pipeline.polyline is None:
        if required:
            raise ConfigError("this command needs --polyline (or pipeline.polyline in --config)")
        return None
    return load_polyline(cfg.pipeline.polyline, get_projection(cfg.pipeline.projection))


def _track(cfg: RunConfig, path: str):
    fixes, report = _load_fixes(path)
    return project_fixes(fixes, get_projection(cfg.pipeline.projection), _survey_id(path)), fixes, report


# -- commands ------------------------------------------------------------------


def cmd_parse(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    written = []
    results = []
    for path in cfg.inputs:
        fixes, report = read_nmea(path, default_date=args.default_date)
        stem = _survey_id(path) if len(cfg.inputs) > 1 else ""
        prefix = f"{stem}_" if stem else ""
        _write(out, f"{prefix}parse_report.json", reports.dumps_json(report.as_dict()), written)
        if cfg.format == "csv":
            _write(out, f"{prefix}fixes.csv", reports.fixes_csv(fixes), written)
        else:
            rows = [
                {"timestamp": f.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "latitude": f.latitude, "longitude": f.longitude,
                 "fix_quality": f.fix_quality_code, "satellites": f.satellites_used,
                 "hdop": f.hdop, "altitude_m": f.altitude_m}
                for f in fixes
            ]
            _write(out, f"{prefix}fixes.json", reports.dumps_json(rows), written)
        results.append({"input": path, "report": report.as_dict()})
    return {"command": "parse", "results": results, "outputs": written}


def cmd_accuracy(cfg: RunConfig, args) -> dict:
    poly = _polyline(cfg, required=True)
    out = Path(cfg.output_dir)
    written, results = [], []
    for path in cfg.inputs:
        track, _, _ = _track(cfg, path)
        rs = residual_series(track, poly)
        stats = accuracy_stats(rs)
        payload = {"survey_id": track.survey_id, "full": stats.as_dict()}
        if args.exclude_static:
            windows = extract_static_windows(track, cfg.pipeline.static_window,
                                             cfg.pipeline.static_placement)
            trimmed = rs.excluding([(w.track.times[0], w.track.times[-1]) for w in windows])
            payload["static_excluded"] = accuracy_stats(trimmed).as_dict()
        prefix = f"{track.survey_id}_" if len(cfg.inputs) > 1 else ""
        _write(out, f"{prefix}accuracy.json", reports.dumps_json(payload), written)
        if cfg.format == "csv":
            _write(out, f"{prefix}ellipses.csv", reports.ellipses_csv(stats), written)
        results.append(payload)
    return {"command": "accuracy", "results": results, "outputs": written}


def cmd_precision(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    rows, results = [], []
    for path in cfg.inputs:
        track, fixes, _ = _track(cfg, path)
        header = extract_header_metadata(Path(path).read_text(errors="replace"))
        sensor = args.sensor or header.get("device_model", "")
        windows = extract_static_windows(track, cfg.pipeline.static_window,
                                         cfg.pipeline.static_placement)
        reps = [static_precision(w, cfg.pipeline.precision_epochs) for w in windows]
        label = fixes[0].timestamp.strftime("%Y-%m-%d %H:%M")
        rows.append((label, sensor, reps))
        results.append({"input": path, "survey": label, "sensor": sensor,
                        "windows": [r.as_dict() for r in reps]})
    written = []
    if cfg.format == "csv":
        _write(out, "precision.csv", reports.precision_table_csv(rows), written)
    else:
        _write(out, "precision.json", reports.dumps_json(results), written)
    return {"command": "precision", "results": results, "outputs": written}


def cmd_acf(cfg: RunConfig, args) -> dict:
    poly = _polyline(cfg, required=cfg.pipeline.acf_source == "residual")
    out = Path(cfg.output_dir)
    written, results = [], []
    for path in cfg.inputs:
        track, _, _ = _track(cfg, path)
        if cfg.pipeline.acf_source == "residual":
            east, north = residual_acf(residual_series(track, poly), cfg.pipeline.max_lag)
        else:
            east, north = coordinate_acf(track, cfg.pipeline.max_lag)
        prefix = f"{track.survey_id}_" if len(cfg.inputs) > 1 else ""
        series = {"east": east, "north": north}
        if cfg.format == "csv":
            for name, s in series.items():
                _write(out, f"{prefix}acf_{name}.csv", reports.acf_csv(s), written)
        else:
            _write(out, f"{prefix}acf.json", reports.dumps_json({
                k: {"lags": s.lags, "values": s.values, "n": s.n,
                    "significance_bound": s.significance_bound}
                for k, s in series.items()
            }), written)
        results.append({
            "input": path, "n": east.n, "significance_bound": east.significance_bound,
            "significant_lags": {k: int(s.significant().sum()) for k, s in series.items()},
        })
    return {"command": "acf", "results": results, "outputs": written}


def _stops_for(cfg: RunConfig, path: str):
    track, _, _ = _track(cfg, path)
    sp = median_filter(speed_series(track), cfg.pipeline.filter_window)
    return detect_stops(sp, cfg.pipeline.speed_threshold, cfg.pipeline.min_duration)


def cmd_stops(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    params = get_projection(cfg.pipeline.projection)
    events = []
    for path in cfg.inputs:
        events.extend(_stops_for(cfg, path))
    written = []
    if cfg.format == "geojson":
        _write(out, "stops.geojson", reports.dumps_json(reports.stops_geojson(events, params)), written)
    else:
        _write(out, "stops.csv", reports.stops_csv(events), written)
    return {"command": "stops", "n_stops": len(events),
            "stops": [{**e.as_dict(), "start": reports._iso(e.start), "end": reports._iso(e.end)}
                      for e in events],
            "outputs": written}


def cmd_hotspots(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    params = get_projection(cfg.pipeline.projection)
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        per_survey = list(pool.map(lambda p: _stops_for(cfg, p), cfg.inputs))
    events = [e for evs in per_survey for e in evs]
    hotspots = cluster_hotspots(events, cfg.pipeline.merge_radius)
    written = []
    if cfg.format == "geojson":
        fc = reports.hotspots_geojson(hotspots, params)
        fc["properties"]["merge_radius_m"] = cfg.pipeline.merge_radius
        _write(out, "hotspots.geojson", reports.dumps_json(fc), written)
    else:
        _write(out, "hotspots.csv", reports.hotspots_csv(hotspots), written)
    return {"command": "hotspots", "n_events": len(events), "n_hotspots": len(hotspots),
            "hotspots": [h.as_dict() for h in hotspots], "outputs": written}


def cmd_analyze(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    poly = _polyline(cfg, required=False)
    results, written = [], []
    for path in cfg.inputs:
        fixes, report = _load_fixes(path)
        sid = _survey_id(path)
        analysis = analyze_fixes(fixes, cfg.pipeline, sid, report, poly)
        target = out / sid if len(cfg.inputs) > 1 else out
        files = analysis.write_bundle(target, cfg.pipeline)
        written.extend(files.values())
        results.append({"input": path, "n_stops": len(analysis.stops),
                        "unavailable": analysis.unavailable})
    return {"command": "analyze", "results": results, "outputs": written}


def cmd_simulate(cfg: RunConfig, args) -> dict:
    params = get_projection(cfg.pipeline.projection)
    sc_cfg = args.scenario if args.scenario is not None else {}
    sc, em, device = load_scenario_config(sc_cfg, params)
    if args.seed is not None:
        em = ErrorModel(em.sigma, em.correlation_time, args.seed, em.quantize)
    if args.sigma is not None:
        em = ErrorModel(args.sigma, em.correlation_time, em.seed, em.quantize)
    if args.no_quantize:
        em = ErrorModel(em.sigma, em.correlation_time, em.seed, False)
    name = args.name
    if args.static is not None:
        sim = simulate_static(args.static, em, params=params, start_time=sc.start_time,
                              survey_id=name)
    else:
        sim = simulate_survey(sc, em, params, survey_id=name)
    out = Path(cfg.output_dir)
    written = []
    _write(out, f"{name}.nmea", emit_nmea(sim.fixes, device), written)
    truth = sim.truth
    rows = zip(
        (reports._iso(t) for t in truth.times), truth.easting, truth.northing,
        sim.noise[:, 0], sim.noise[:, 1],
    )
    _write(out, f"{name}_truth.csv",
           reports._csv(["timestamp", "easting", "northing", "noise_east_m", "noise_north_m"], rows),
           written)
    if sim.scenario is not None:
        v = sim.scenario.polyline.vertices
        if sim.scenario.polyline.closed:
            v = np.vstack([v, v[:1]])
        _write(out, f"{name}_polyline.csv",
               "".join(f"{e!r},{n!r}\n" for e, n in v.tolist()), written)
    dwell = [{"start": reports._iso(a), "end": reports._iso(b), "easting": p[0], "northing": p[1]}
             for a, b, p in sim.dwell]
    _write(out, f"{name}_dwell.json", reports.dumps_json(dwell), written)
    return {"command": "simulate", "n_fixes": len(sim.fixes), "device_model": device,
            "seed": em.seed, "sigma_m": em.sigma, "correlation_time_s": em.correlation_time,
            "outputs": written}


def cmd_serve(cfg: RunConfig, args) -> dict:
    import uvicorn

    from .service.app import create_app

    svc = cfg.service
    if args.catalog is not None:
        svc.catalog_root = args.catalog
    if args.host is not None:
        svc.host = args.host
    if args.port is not None:
        svc.port = args.port
    if args.workers is not None:
        svc.workers = args.workers
    svc.validate()
    app = create_app(config=svc)
    uvicorn.run(app, host=svc.host, port=svc.port, log_level="info")
    return {"command": "serve"}


COMMANDS = {
    "parse": cmd_parse,
    "accuracy": cmd_accuracy,
    "precision": cmd_precision,
    "acf": cmd_acf,
    "stops": cmd_stops,
    "hotspots": cmd_hotspots,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
}


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _scenario(text: str):
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"scenario file {text!r} does not exist")
    return str(p)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("-o", "--out", help="output directory (default: current directory)")
    common.add_argument("--format", help="output format, see each command")
    common.add_argument("--projection", help="projected CRS code (default EPSG:25832)")
    common.add_argument("-v", "--verbose", action="store_true")

    pipe = _Parser(add_help=False)
    pipe.add_argument("--polyline", help="reference path (GeoJSON or CSV)")
    pipe.add_argument("--speed-threshold", dest="speed_threshold", type=float)
    pipe.add_argument("--min-duration", dest="min_duration", type=float)
    pipe.add_argument("--filter-window", dest="filter_window", type=int)
    pipe.add_argument("--merge-radius", dest="merge_radius", type=float)
    pipe.add_argument("--static-window", dest="static_window", type=float,
                      help="static window length in seconds")
    pipe.add_argument("--static-placement", dest="static_placement",
                      choices=("start", "end", "both"))
    pipe.add_argument("--precision-epochs", dest="precision_epochs", type=int)
    pipe.add_argument("--max-lag", dest="max_lag", type=int)
    pipe.add_argument("--acf-source", dest="acf_source", choices=("residual", "coordinate"))

    parser = _Parser(prog="gardentrack",
                     description="NMEA track quality and stop/hotspot analysis")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, inputs="+"):
        p = sub.add_parser(name, parents=[common, pipe], help=help_)
        if inputs:
            p.add_argument("inputs", nargs=inputs, help="NMEA log(s) or fixes.csv")
        return p

    p = add("parse", "parse NMEA into fixes and a parse report (--format csv|json)")
    p.add_argument("--default-date", dest="default_date", type=_date,
                   help="date for files without RMC sentences")
    p = add("accuracy", "residual statistics against the reference polyline (--format csv|json)")
    p.add_argument("--exclude-static", action="store_true",
                   help="also report statistics without the static windows")
    p = add("precision", "static-window precision table (--format csv|json)")
    p.add_argument("--sensor", help="sensor label when the file header has none")
    add("acf", "east/north autocorrelation (--format csv|json)")
    add("stops", "stop events (--format geojson|csv)")
    p = add("hotspots", "cross-survey hotspots (--format geojson|csv)")
    p.add_argument("--workers", type=int, default=4, help="parallel survey workers")
    add("analyze", "full pipeline report bundle per survey")
    p = add("simulate", "synthetic survey: NMEA log plus true path CSV", inputs=None)
    p.add_argument("--scenario", type=_scenario, help="scenario JSON (default: field protocol)")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="override the error model sigma (m)")
    p.add_argument("--no-quantize", action="store_true")
    p.add_argument("--static", type=float, metavar="SECONDS",
                   help="emit a static-only survey of this length instead")
    p.add_argument("--name", default="survey", help="output file stem")
    p = add("serve", "run the ingest HTTP service", inputs=None)
    p.add_argument("--catalog", help="catalog root directory")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--workers", type=int)
    return parser


def _fail(exc: Exception, status: int) -> int:
    code = getattr(exc, "code", type(exc).__name__)
    sys.stderr.write(json.dumps({"error": code, "message": str(exc)}, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv in ([], ["-h"], ["--help"]):
        try:
            parser.parse_args(argv or ["--help"])
        except SystemExit as exc:
            return int(exc.code or 0)
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        cfg = resolve_config(args)
    except ConfigError as exc:
        return _fail(exc, 2)
    except GardenTrackError as exc:
        return _fail(exc, 2)
    except SystemExit as exc:  # --help on a subcommand
        return int(exc.code or 0)
    try:
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(exc, 2)
    except GardenTrackError as exc:
        return _fail(exc, 1)
    except OSError as exc:
        return _fail(exc, 1)
    sys.stdout.write(reports.dumps_json(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
